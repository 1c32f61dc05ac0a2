use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::argmax_lowest;

fn class_counts(y: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    counts
}

fn normalize_log(joint: &mut [f64]) {
    let m = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = joint.iter().map(|v| (v - m).exp()).sum();
    let log_z = m + z.ln();
    for v in joint.iter_mut() {
        *v = (*v - log_z).exp();
    }
}

/// Gaussian naive Bayes. `var_smoothing` times the largest feature variance
/// is added to every per-class variance. Classes absent from the training
/// labels are never predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    means: Array2<f64>,
    vars: Array2<f64>,
    /// `-inf` for absent classes.
    log_priors: Vec<f64>,
}

impl GaussianNb {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, var_smoothing: f64) -> Self {
        let d = x.ncols();
        let counts = class_counts(y, n_classes);
        let max_var = x.var_axis(Axis(0), 0.0).iter().copied().fold(0.0, f64::max);
        let epsilon = (var_smoothing * max_var).max(1e-300);

        let mut means = Array2::<f64>::zeros((n_classes, d));
        let mut vars = Array2::<f64>::ones((n_classes, d));
        for (row, &c) in x.rows().into_iter().zip(y) {
            let mut m = means.row_mut(c);
            m += &row;
        }
        for c in 0..n_classes {
            if counts[c] > 0 {
                means.row_mut(c).mapv_inplace(|v| v / counts[c] as f64);
                vars.row_mut(c).fill(0.0);
            }
        }
        for (row, &c) in x.rows().into_iter().zip(y) {
            for j in 0..d {
                vars[[c, j]] += (row[j] - means[[c, j]]).powi(2);
            }
        }
        for c in 0..n_classes {
            if counts[c] > 0 {
                vars.row_mut(c).mapv_inplace(|v| v / counts[c] as f64 + epsilon);
            }
        }
        let n = y.len() as f64;
        let log_priors = counts
            .iter()
            .map(|&k| if k > 0 { (k as f64 / n).ln() } else { f64::NEG_INFINITY })
            .collect();
        GaussianNb { means, vars, log_priors }
    }

    pub fn n_features(&self) -> usize {
        self.means.ncols()
    }

    fn joint_log_likelihood(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let k = self.log_priors.len();
        let mut out = Array2::<f64>::zeros((x.nrows(), k));
        for (i, row) in x.rows().into_iter().enumerate() {
            for c in 0..k {
                let prior = self.log_priors[c];
                if prior == f64::NEG_INFINITY {
                    out[[i, c]] = f64::NEG_INFINITY;
                    continue;
                }
                let mut ll = prior;
                for j in 0..row.len() {
                    let var = self.vars[[c, j]];
                    let diff = row[j] - self.means[[c, j]];
                    ll -= 0.5 * (2.0 * std::f64::consts::PI * var).ln() + diff * diff / (2.0 * var);
                }
                out[[i, c]] = ll;
            }
        }
        out
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut jll = self.joint_log_likelihood(x);
        for mut row in jll.rows_mut() {
            normalize_log(row.as_slice_mut().expect("standard layout"));
        }
        jll
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.joint_log_likelihood(x).rows().into_iter().map(|r| argmax_lowest(&r.to_vec())).collect()
    }
}

/// Bernoulli naive Bayes over features binarized at 0 with additive
/// (Laplace) smoothing `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliNb {
    log_p: Array2<f64>,
    log_not_p: Array2<f64>,
    log_priors: Array1<f64>,
}

impl BernoulliNb {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, alpha: f64, fit_prior: bool) -> Self {
        let d = x.ncols();
        let counts = class_counts(y, n_classes);
        let mut ones = Array2::<f64>::zeros((n_classes, d));
        for (row, &c) in x.rows().into_iter().zip(y) {
            for j in 0..d {
                if row[j] > 0.0 {
                    ones[[c, j]] += 1.0;
                }
            }
        }
        let mut log_p = Array2::<f64>::zeros((n_classes, d));
        let mut log_not_p = Array2::<f64>::zeros((n_classes, d));
        for c in 0..n_classes {
            for j in 0..d {
                let p = (ones[[c, j]] + alpha) / (counts[c] as f64 + 2.0 * alpha);
                log_p[[c, j]] = p.ln();
                log_not_p[[c, j]] = (1.0 - p).ln();
            }
        }
        let present = counts.iter().filter(|&&k| k > 0).count() as f64;
        let n = y.len() as f64;
        let log_priors = Array1::from_iter(counts.iter().map(|&k| {
            if k == 0 {
                f64::NEG_INFINITY
            } else if fit_prior {
                (k as f64 / n).ln()
            } else {
                -present.ln()
            }
        }));
        BernoulliNb { log_p, log_not_p, log_priors }
    }

    pub fn n_features(&self) -> usize {
        self.log_p.ncols()
    }

    fn joint_log_likelihood(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let k = self.log_priors.len();
        let mut out = Array2::<f64>::zeros((x.nrows(), k));
        for (i, row) in x.rows().into_iter().enumerate() {
            for c in 0..k {
                let mut ll = self.log_priors[c];
                if ll != f64::NEG_INFINITY {
                    for j in 0..row.len() {
                        ll += if row[j] > 0.0 { self.log_p[[c, j]] } else { self.log_not_p[[c, j]] };
                    }
                }
                out[[i, c]] = ll;
            }
        }
        out
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut jll = self.joint_log_likelihood(x);
        for mut row in jll.rows_mut() {
            normalize_log(row.as_slice_mut().expect("standard layout"));
        }
        jll
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.joint_log_likelihood(x).rows().into_iter().map(|r| argmax_lowest(&r.to_vec())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gaussian_posteriors_sum_to_one() {
        let x = array![[0.0, 1.0], [0.5, 1.2], [3.0, -1.0], [3.5, -0.5], [1.0, 0.0]];
        let y = [0, 0, 1, 1, 2];
        let m = GaussianNb::fit(x.view(), &y, 3, 1e-9);
        for row in m.predict_proba(x.view()).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn absent_class_is_never_predicted() {
        let x = array![[0.0], [1.0], [10.0]];
        let m = GaussianNb::fit(x.view(), &[0, 0, 2], 3, 1e-9);
        assert!(m.predict(array![[0.5], [5.0], [9.0]].view()).iter().all(|&c| c != 1));
        let b = BernoulliNb::fit(x.view(), &[0, 0, 2], 3, 1.0, false);
        assert!(b.predict(array![[0.5], [5.0], [9.0]].view()).iter().all(|&c| c != 1));
    }

    #[test]
    fn bernoulli_matches_hand_computation() {
        // class 0 rows: [1,0], [1,1]; class 1 rows: [0,0]. alpha = 1.
        // P(f0=1|0) = (2+1)/(2+2) = 3/4, P(f1=1|0) = (1+1)/4 = 1/2
        // P(f0=1|1) = (0+1)/(1+2) = 1/3, P(f1=1|1) = 1/3
        let x = array![[1.0, 0.0], [2.0, 3.0], [-1.0, 0.0]];
        let m = BernoulliNb::fit(x.view(), &[0, 0, 1], 2, 1.0, true);
        let q = array![[1.0, 0.0]];
        let p0 = (2.0f64 / 3.0) * 0.75 * 0.5;
        let p1 = (1.0f64 / 3.0) * (1.0 / 3.0) * (2.0 / 3.0);
        let proba = m.predict_proba(q.view());
        assert!((proba[[0, 0]] - p0 / (p0 + p1)).abs() < 1e-12);
        for row in m.predict_proba(x.view()).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}

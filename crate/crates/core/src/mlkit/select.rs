use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::StepError;

fn take_columns(x: ArrayView2<'_, f64>, keep: &[usize]) -> Array2<f64> {
    x.select(Axis(1), keep)
}

/// Drops features whose (population) variance is at most `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceThreshold {
    keep: Vec<usize>,
    n_features: usize,
}

impl VarianceThreshold {
    pub fn fit(x: ArrayView2<'_, f64>, threshold: f64) -> Result<Self, StepError> {
        let keep: Vec<usize> = x
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, col)| col.var(0.0) > threshold)
            .map(|(j, _)| j)
            .collect();
        if keep.is_empty() {
            return Err(StepError::AllFeaturesDropped);
        }
        Ok(VarianceThreshold { keep, n_features: x.ncols() })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn kept(&self) -> &[usize] {
        &self.keep
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        take_columns(x, &self.keep)
    }
}

/// Keeps the top `percentile` percent of features ranked by the one-way
/// ANOVA F statistic against the labels (at least one feature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectPercentile {
    keep: Vec<usize>,
    n_features: usize,
}

/// One-way ANOVA F statistic of every column against `y`. Constant columns
/// score 0; columns with no within-class spread score +inf.
pub fn f_scores(x: ArrayView2<'_, f64>, y: &[usize]) -> Vec<f64> {
    let n_classes = y.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let n = y.len();

    x.axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n as f64;
            let mut sums = vec![0.0; n_classes];
            for (v, &c) in col.iter().zip(y) {
                sums[c] += v;
            }
            let class_means: Vec<f64> =
                sums.iter().zip(&counts).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect();
            let mut ssw = 0.0;
            let mut sst = 0.0;
            for (v, &c) in col.iter().zip(y) {
                ssw += (v - class_means[c]).powi(2);
                sst += (v - mean).powi(2);
            }
            let ssb = (sst - ssw).max(0.0);
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            if present < 2 || sst <= 1e-24 * scale * scale * n as f64 {
                0.0
            } else if ssw <= 1e-12 * sst || n == present {
                f64::INFINITY
            } else {
                (ssb / (present - 1) as f64) / (ssw / (n - present) as f64)
            }
        })
        .collect()
}

impl SelectPercentile {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], percentile: u32) -> Self {
        let d = x.ncols();
        let scores = f_scores(x, y);
        let k = ((d as f64 * percentile as f64 / 100.0).ceil() as usize).clamp(1, d);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut keep = order[..k].to_vec();
        keep.sort_unstable();
        SelectPercentile { keep, n_features: d }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn kept(&self) -> &[usize] {
        &self.keep
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        take_columns(x, &self.keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn variance_threshold_drops_constant_columns() {
        let x = array![[1.0, 5.0, 0.0], [2.0, 5.0, 0.1], [3.0, 5.0, 0.0]];
        let m = VarianceThreshold::fit(x.view(), 0.01).unwrap();
        assert_eq!(m.kept(), &[0]);
        let m = VarianceThreshold::fit(x.view(), 0.0).unwrap();
        assert_eq!(m.kept(), &[0, 2]);
        assert_eq!(VarianceThreshold::fit(x.view(), 10.0), Err(StepError::AllFeaturesDropped));
    }

    #[test]
    fn f_score_matches_hand_computation() {
        // Column: class 0 -> [1, 2, 3], class 1 -> [5, 6, 7].
        // Grand mean 4; SSB = 3*(2-4)^2 + 3*(6-4)^2 = 24; SSW = 2 + 2 = 4.
        // F = (24 / 1) / (4 / 4) = 24.
        let x = array![[1.0], [2.0], [3.0], [5.0], [6.0], [7.0]];
        let y = [0, 0, 0, 1, 1, 1];
        let s = f_scores(x.view(), &y);
        assert!((s[0] - 24.0).abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn perfectly_separating_feature_ranks_first() {
        let x = array![[0.0, 1.0, 3.0], [0.0, 2.0, 3.0], [1.0, 1.5, 3.0], [1.0, 0.5, 3.0]];
        let y = [0, 0, 1, 1];
        let s = f_scores(x.view(), &y);
        assert!(s[0].is_infinite());
        assert_eq!(s[2], 0.0);
        let m = SelectPercentile::fit(x.view(), &y, 5);
        assert_eq!(m.kept(), &[0]);
        let m = SelectPercentile::fit(x.view(), &y, 100);
        assert_eq!(m.kept(), &[0, 1, 2]);
    }
}

//! Synthetic classification data with a known structure.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::evaluation::Dataset;

/// Class-conditional Gaussian blobs.
///
/// Class `c` has unit variance in every dimension and its mean at angle
/// `2 pi c / n_classes` on a circle of radius `radius` spanned by the first
/// two features. The remaining `n_noise` features are pure noise. Labels
/// cycle through the classes, so class sizes differ by at most one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blobs {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_noise: usize,
    pub radius: f64,
}

impl Blobs {
    /// 3 classes, 2 informative and 8 noise features, means `3 sigma` from
    /// the origin.
    pub fn three_class(n_samples: usize) -> Self {
        Blobs { n_samples, n_classes: 3, n_noise: 8, radius: 3.0 }
    }

    /// The harder 10-class variant used for ablations.
    pub fn ten_class(n_samples: usize) -> Self {
        Blobs { n_samples, n_classes: 10, n_noise: 8, radius: 6.0 }
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        (0..self.n_classes)
            .map(|c| {
                let a = 2.0 * PI * c as f64 / self.n_classes as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 2 + self.n_noise;
        let means = self.means();
        let labels: Vec<usize> = (0..self.n_samples).map(|i| i % self.n_classes).collect();
        let mut x = Array2::<f64>::zeros((self.n_samples, d));
        for (i, &c) in labels.iter().enumerate() {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = z + if j < 2 { means[c][j] } else { 0.0 };
            }
        }
        let class_names = (0..self.n_classes).map(|c| format!("c{c}")).collect();
        let feature_names = (0..d).map(|j| format!("x{j}")).collect();
        Dataset::new(x, labels, class_names, feature_names).expect("generated data is well-formed")
    }

    /// Predictions of the Bayes-optimal rule (nearest mean in the
    /// informative plane, equal priors).
    pub fn bayes_predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let means = self.means();
        x.rows()
            .into_iter()
            .map(|r| {
                let dist = |m: &[f64; 2]| (r[0] - m[0]).powi(2) + (r[1] - m[1]).powi(2);
                (0..means.len()).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap_or(0)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::balanced_accuracy;

    #[test]
    fn shapes_and_balance() {
        let d = Blobs::three_class(600).generate(1);
        assert_eq!(d.features.dim(), (600, 10));
        for c in 0..3 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 200);
        }
    }

    #[test]
    fn bayes_rule_is_accurate() {
        let b = Blobs::three_class(6000);
        let d = b.generate(2);
        let acc = balanced_accuracy(&d.labels, &b.bayes_predict(&d.features)).unwrap();
        assert!(acc > 0.98, "{acc}");
    }
}

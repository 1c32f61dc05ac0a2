use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Random Fourier features approximating the RBF kernel
/// `exp(-gamma * ||x - y||^2)`:
/// `z(x) = sqrt(2 / n) * cos(W^T x + b)` with `W ~ N(0, 2 gamma I)` and
/// `b ~ U[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSampler {
    /// `features x components`.
    weights: Array2<f64>,
    offsets: Array1<f64>,
}

impl RbfSampler {
    pub fn fit<R: Rng + ?Sized>(n_features: usize, gamma: f64, n_components: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("gamma is positive");
        let weights = Array2::from_shape_simple_fn((n_features, n_components), || normal.sample(rng));
        let offsets = Array1::from_shape_simple_fn(n_components, || rng.random_range(0.0..2.0 * PI));
        RbfSampler { weights, offsets }
    }

    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = (2.0 / self.offsets.len() as f64).sqrt();
        let mut z = x.dot(&self.weights) + &self.offsets;
        z.mapv_inplace(|v| scale * v.cos());
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inner_products_approximate_the_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let gamma = 0.5;
        let s = RbfSampler::fit(2, gamma, 20_000, &mut rng);
        let x = array![[0.0, 0.0], [1.0, 0.5], [0.2, -0.4]];
        let z = s.transform(x.view());
        for i in 0..3 {
            for j in 0..3 {
                let d2: f64 = (0..2).map(|k| (x[[i, k]] - x[[j, k]]).powi(2)).sum();
                let exact = (-gamma * d2).exp();
                let approx = z.row(i).dot(&z.row(j));
                assert!((exact - approx).abs() < 0.03, "{i},{j}: {exact} vs {approx}");
            }
        }
    }

    #[test]
    fn fixed_seed_fixed_state() {
        let a = RbfSampler::fit(3, 1.0, 10, &mut ChaCha8Rng::seed_from_u64(1));
        let b = RbfSampler::fit(3, 1.0, 10, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

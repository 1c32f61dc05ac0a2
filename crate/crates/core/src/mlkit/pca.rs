use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::symmetric_eigen;
use super::StepError;

/// Principal component projection computed from the sample covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    mean: Array1<f64>,
    /// One component per row.
    components: Array2<f64>,
    explained_variance: Array1<f64>,
    whiten: bool,
}

impl Pca {
    /// `n_components` is clamped to `min(features, samples - 1)`.
    pub fn fit(x: ArrayView2<'_, f64>, n_components: usize, whiten: bool) -> Result<Self, StepError> {
        let (n, d) = x.dim();
        if n < 2 {
            return Err(StepError::TooFewSamples("pca", 2));
        }
        let k = n_components.min(d).min(n - 1).max(1);
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = &x - &mean;
        let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
        let (values, vectors) = symmetric_eigen(&cov);

        let explained_variance = values.slice(ndarray::s![..k]).mapv(|v| v.max(0.0));
        let mut components = Array2::<f64>::zeros((k, d));
        for i in 0..k {
            let mut c = vectors.column(i).to_owned();
            // Deterministic sign: largest-magnitude entry positive.
            let pivot = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if pivot < 0.0 {
                c.mapv_inplace(|v| -v);
            }
            components.row_mut(i).assign(&c);
        }

        if whiten {
            let top = values.get(0).copied().unwrap_or(0.0).max(0.0);
            if let Some(i) = explained_variance.iter().position(|&v| v <= 1e-12 * top || v <= 0.0) {
                return Err(StepError::DegenerateCovariance(format!(
                    "component {i} has variance {} and cannot be whitened",
                    explained_variance[i]
                )));
            }
        }
        Ok(Pca { mean, components, explained_variance, whiten })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &Array1<f64> {
        &self.explained_variance
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let centered = &x - &self.mean;
        let mut z = centered.dot(&self.components.t());
        if self.whiten {
            for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
                let s = self.explained_variance[j].sqrt();
                col.mapv_inplace(|v| v / s);
            }
        }
        z
    }

    /// Maps projected data back to the input space (non-whitened models).
    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = z.to_owned();
        if self.whiten {
            for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
                let s = self.explained_variance[j].sqrt();
                col.mapv_inplace(|v| v * s);
            }
        }
        z.dot(&self.components) + &self.mean
    }
}

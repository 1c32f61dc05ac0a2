use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Per-feature rescaling to `[0, 1]`; constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    range: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mut min = Vec::with_capacity(x.ncols());
        let mut range = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min.push(lo);
            range.push(hi - lo);
        }
        MinMaxScaler { min, range }
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, r) = (self.min[j], self.range[j]);
            col.mapv_inplace(|v| if r > 0.0 { (v - lo) / r } else { 0.0 });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Max,
}

/// Scales every row to unit norm. Rows with zero norm pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    norm: Norm,
    n_features: usize,
}

impl Normalizer {
    pub fn new(n_features: usize, norm: Norm) -> Self {
        Normalizer { norm, n_features }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let n = match self.norm {
                Norm::L1 => row.iter().map(|v| v.abs()).sum::<f64>(),
                Norm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
                Norm::Max => row.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            };
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
        }
        out
    }
}

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::argmax_lowest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnWeights {
    Uniform,
    Distance,
}

/// Brute-force k-nearest-neighbour classifier with a Minkowski metric.
///
/// Neighbours at equal distance are ordered by training index. Under
/// distance weighting, neighbours at distance zero outvote everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    x: Array2<f64>,
    y: Vec<usize>,
    n_classes: usize,
    k: usize,
    weights: KnnWeights,
    p: u8,
}

impl Knn {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        k: usize,
        weights: KnnWeights,
        p: u8,
    ) -> Self {
        Knn { x: x.to_owned(), y: y.to_vec(), n_classes, k: k.max(1), weights, p }
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    fn distance(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self.p {
            1 => a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum(),
            _ => a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt(),
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        let k = self.k.min(self.y.len());
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.y.len());
        x.rows()
            .into_iter()
            .map(|q| {
                dist.clear();
                dist.extend(self.x.rows().into_iter().enumerate().map(|(i, r)| (self.distance(q, r), i)));
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, cmp);
                }
                let nearest = &mut dist[..k];
                nearest.sort_by(cmp);

                let mut votes = vec![0.0; self.n_classes];
                match self.weights {
                    KnnWeights::Uniform => {
                        for &(_, i) in nearest.iter() {
                            votes[self.y[i]] += 1.0;
                        }
                    }
                    KnnWeights::Distance => {
                        if nearest[0].0 == 0.0 {
                            for &(d, i) in nearest.iter().take_while(|(d, _)| *d == 0.0) {
                                debug_assert_eq!(d, 0.0);
                                votes[self.y[i]] += 1.0;
                            }
                        } else {
                            for &(d, i) in nearest.iter() {
                                votes[self.y[i]] += 1.0 / d;
                            }
                        }
                    }
                }
                argmax_lowest(&votes)
            })
            .collect()
    }
}

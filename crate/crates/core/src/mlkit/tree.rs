use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, Params, StepError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    fn count(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (d as f64).log2().floor() as usize,
            MaxFeatures::All => d,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { criterion: Criterion::Gini, max_depth: 30, max_features: MaxFeatures::All }
    }
}

impl TreeParams {
    /// Forests default to `sqrt` feature subsampling, single trees to `all`.
    pub(crate) fn from_params(p: &Params<'_>) -> Result<Self, StepError> {
        let default_features = if p.algorithm == "randomForest" { MaxFeatures::Sqrt } else { MaxFeatures::All };
        Ok(TreeParams {
            criterion: p.choice("criterion", Criterion::Gini, &[("gini", Criterion::Gini), ("entropy", Criterion::Entropy)])?,
            max_depth: p.positive("maxDepth", 30)?,
            max_features: p.choice(
                "maxFeatures",
                default_features,
                &[("sqrt", MaxFeatures::Sqrt), ("log2", MaxFeatures::Log2), ("all", MaxFeatures::All)],
            )?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

fn impurity(counts: &[usize], total: usize, criterion: Criterion) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>(),
        Criterion::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

/// Majority class of `counts`; on a tie the parent's class wins when it is
/// among the tied classes, otherwise the lowest class id.
fn leaf_class(counts: &[usize], parent: Option<usize>) -> usize {
    let best = counts.iter().copied().max().unwrap_or(0);
    match parent {
        Some(p) if counts[p] == best => p,
        _ => counts.iter().position(|&c| c == best).unwrap_or(0),
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    params: TreeParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        counts
    }

    fn best_split_on(&self, idx: &mut [usize], feature: usize, best: &mut Option<BestSplit>) {
        let column = self.x.column(feature);
        let mut sorted: Vec<(f64, usize)> = idx.iter().map(|&i| (column[i], i)).collect();
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, &(_, i)) in idx.iter_mut().zip(&sorted) {
            *slot = i;
        }
        let total = idx.len();
        let mut right = self.counts(idx);
        let mut left = vec![0usize; self.n_classes];
        for pos in 0..total - 1 {
            let c = self.y[sorted[pos].1];
            left[c] += 1;
            right[c] -= 1;
            let here = sorted[pos].0;
            let next = sorted[pos + 1].0;
            if here == next {
                continue;
            }
            let nl = pos + 1;
            let nr = total - nl;
            let score = (nl as f64 * impurity(&left, nl, self.params.criterion)
                + nr as f64 * impurity(&right, nr, self.params.criterion))
                / total as f64;
            if best.as_ref().is_none_or(|b| score < b.score - 1e-12) {
                let mut threshold = here + (next - here) / 2.0;
                if threshold >= next || threshold < here {
                    threshold = here;
                }
                *best = Some(BestSplit { feature, threshold, score });
            }
        }
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, parent: Option<usize>, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(idx);
        let class = leaf_class(&counts, parent);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { class });
        if pure || depth >= self.params.max_depth || idx.len() < 2 {
            return id;
        }

        let d = self.x.ncols();
        let k = self.params.max_features.count(d);
        let order: Vec<usize> = if k < d { sample(rng, d, d).into_vec() } else { (0..d).collect() };
        // Like CART in common libraries: keep scanning past the first `k`
        // features only while no usable split has been found.
        let mut best = None;
        for (visited, &feature) in order.iter().enumerate() {
            if visited >= k && best.is_some() {
                break;
            }
            self.best_split_on(idx, feature, &mut best);
        }
        let Some(split) = best else { return id };

        let x = self.x;
        idx.sort_by_key(|&i| x[[i, split.feature]] > split.threshold);
        let cut = idx.partition_point(|&i| x[[i, split.feature]] <= split.threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, Some(class), rng);
        let right = self.grow(r, depth + 1, Some(class), rng);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// CART classification tree with binary splits `x[f] <= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    n_classes: usize,
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        Self::fit_indices(x, y, n_classes, params, &mut idx, rng)
    }

    fn fit_indices(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        params: &TreeParams,
        idx: &mut [usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut b = Builder { x: x.view(), y, n_classes, params: *params, nodes: Vec::new() };
        b.grow(idx, 0, None, rng);
        DecisionTree { n_features: x.ncols(), n_classes, nodes: b.nodes }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn predict_row(&self, row: ndarray::ArrayView1<'_, f64>) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        x.rows().into_iter().map(|r| self.predict_row(r)).collect()
    }
}

/// Bagged CART trees; each tree gets its own stream seeded from `rng`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    n_features: usize,
    n_classes: usize,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        n_estimators: usize,
        params: &TreeParams,
        bootstrap: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = x.nrows();
        let trees = (0..n_estimators.max(1))
            .map(|_| {
                let mut tree_rng = ChaCha8Rng::seed_from_u64(rng.random::<u64>());
                let mut idx: Vec<usize> = if bootstrap {
                    (0..n).map(|_| tree_rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit_indices(x, y, n_classes, params, &mut idx, &mut tree_rng)
            })
            .collect();
        RandomForest { n_features: x.ncols(), n_classes, trees }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_estimators(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        let mut votes = vec![vec![0.0; self.n_classes]; x.nrows()];
        for tree in &self.trees {
            for (v, c) in votes.iter_mut().zip(tree.predict(x)) {
                v[c] += 1.0;
            }
        }
        votes.iter().map(|v| argmax_lowest(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn boolean_table() -> (Array2<f64>, Vec<usize>) {
        let x = Array2::from_shape_fn((16, 4), |(r, c)| ((r >> c) & 1) as f64);
        let y = (0..16usize).map(|r| ((r & 1) ^ ((r >> 1) & 1)) | (((r >> 2) & (r >> 3)) & 1)).collect();
        (x, y)
    }

    #[test]
    fn deep_tree_shatters_a_boolean_table() {
        let (x, y) = boolean_table();
        for criterion in [Criterion::Gini, Criterion::Entropy] {
            let params = TreeParams { criterion, ..TreeParams::default() };
            let t = DecisionTree::fit(x.view(), &y, 2, &params, &mut ChaCha8Rng::seed_from_u64(0));
            assert_eq!(t.predict(x.view()), y);
        }
    }

    #[test]
    fn depth_is_capped() {
        let (x, y) = boolean_table();
        let params = TreeParams { max_depth: 1, ..TreeParams::default() };
        let t = DecisionTree::fit(x.view(), &y, 2, &params, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(t.depth() <= 1);
    }

    #[test]
    fn leaf_tie_rules() {
        assert_eq!(leaf_class(&[2, 2, 1], None), 0);
        assert_eq!(leaf_class(&[2, 2, 1], Some(1)), 1);
        assert_eq!(leaf_class(&[2, 2, 1], Some(2)), 0);
    }

    #[test]
    fn identical_rows_with_mixed_labels_become_a_leaf() {
        let x = array![[1.0], [1.0], [1.0]];
        let t = DecisionTree::fit(x.view(), &[1, 0, 1], 2, &TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.predict(x.view()), vec![1, 1, 1]);
    }

    #[test]
    fn single_unbootstrapped_tree_forest_matches_the_tree() {
        let (x, y) = boolean_table();
        let params = TreeParams { max_features: MaxFeatures::Sqrt, ..TreeParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let forest = RandomForest::fit(x.view(), &y, 2, 1, &params, false, &mut rng);
        let mut seed_rng = ChaCha8Rng::seed_from_u64(9);
        let mut tree_rng = ChaCha8Rng::seed_from_u64(seed_rng.random::<u64>());
        let tree = DecisionTree::fit(x.view(), &y, 2, &params, &mut tree_rng);
        assert_eq!(forest.trees[0], tree);
        assert_eq!(forest.predict(x.view()), tree.predict(x.view()));
    }

    #[test]
    fn forest_is_deterministic_under_seed() {
        let (x, y) = boolean_table();
        let params = TreeParams { max_features: MaxFeatures::Sqrt, ..TreeParams::default() };
        let a = RandomForest::fit(x.view(), &y, 2, 10, &params, true, &mut ChaCha8Rng::seed_from_u64(4));
        let b = RandomForest::fit(x.view(), &y, 2, 10, &params, true, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

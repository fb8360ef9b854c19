//! Leaf-weight regression forest.
//!
//! An ensemble of CART trees grown with variance-reduction splits on subsamples drawn
//! without replacement. A query's weight on training point `i` is
//! `(1/B) sum_b 1{X_i in L_b(x)} / |L_b(x)|`, where `L_b(x)` holds the in-bag points of
//! the leaf of tree `b` reached by `x`.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_query, LabeledDataset, WeightModel};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed;

/// Forest hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Fraction of the training set drawn (without replacement) for each tree.
    pub sample_fraction: f64,
    /// Smallest allowed child size; a node splits only if both children reach it.
    pub min_node_size: usize,
    /// Features tried per split; `None` means all of them.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            num_trees: 1000,
            sample_fraction: 0.9,
            min_node_size: 1,
            mtry: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::InvalidParameter("num_trees must be at least 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample_fraction {} outside (0, 1]",
                self.sample_fraction
            )));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidParameter("min_node_size must be at least 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > dim {
                return Err(Error::InvalidParameter(format!(
                    "mtry {m} outside 1..={dim}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf {
        start: usize,
        len: usize,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree<T> {
    nodes: Vec<Node<T>>,
    // In-bag training indices, grouped by leaf.
    members: Vec<usize>,
}

impl<T: Real> Tree<T> {
    fn leaf(&self, x: ArrayView1<'_, T>) -> &[usize] {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { start, len } => return &self.members[start..start + len],
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct Split<T> {
    feature: usize,
    threshold: T,
    // Number of samples going left once sorted by `feature`.
    left_len: usize,
}

struct Grower<'a, T> {
    x: ArrayView2<'a, T>,
    y: ArrayView1<'a, T>,
    mtry: usize,
    min_node_size: usize,
}

impl<T: Real> Grower<'_, T> {
    fn sort_by_feature(&self, idx: &mut [usize], feature: usize) {
        idx.sort_by(|&a, &b| {
            self.x[[a, feature]]
                .partial_cmp(&self.x[[b, feature]])
                .unwrap()
                .then(a.cmp(&b))
        });
    }

    fn best_split(&self, idx: &mut [usize], rng: &mut impl Rng) -> Option<Split<T>> {
        let n = idx.len();
        if n < 2 * self.min_node_size {
            return None;
        }
        let first = self.y[idx[0]];
        if idx.iter().all(|&i| self.y[i] == first) {
            return None;
        }
        let mean = idx.iter().map(|&i| self.y[i]).sum::<T>() / T::of_usize(n);

        let dim = self.x.ncols();
        let mut features = sample(rng, dim, self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<(T, Split<T>)> = None;
        for feature in features {
            self.sort_by_feature(idx, feature);
            let total: T = idx.iter().map(|&i| self.y[i] - mean).sum();
            let mut left_sum = T::zero();
            for pos in 1..n {
                left_sum += self.y[idx[pos - 1]] - mean;
                let (lo, hi) = (self.x[[idx[pos - 1], feature]], self.x[[idx[pos], feature]]);
                if lo == hi || pos < self.min_node_size || n - pos < self.min_node_size {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / T::of_usize(pos)
                    + right_sum * right_sum / T::of_usize(n - pos);
                if gain > T::zero() && best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    let mid = (lo + hi) / T::of(2.0);
                    let threshold = if mid >= hi { lo } else { mid };
                    best = Some((
                        gain,
                        Split {
                            feature,
                            threshold,
                            left_len: pos,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn grow(&self, mut in_bag: Vec<usize>, rng: &mut impl Rng) -> Tree<T> {
        let mut nodes: Vec<Node<T>> = vec![Node::Leaf { start: 0, len: 0 }];
        // (node id, start, len) ranges of `in_bag` still to process.
        let mut pending = vec![(0usize, 0usize, in_bag.len())];
        while let Some((id, start, len)) = pending.pop() {
            let slice = &mut in_bag[start..start + len];
            match self.best_split(slice, rng) {
                None => nodes[id] = Node::Leaf { start, len },
                Some(split) => {
                    self.sort_by_feature(slice, split.feature);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { start: 0, len: 0 });
                    nodes.push(Node::Leaf { start: 0, len: 0 });
                    nodes[id] = Node::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right: left + 1,
                    };
                    pending.push((left + 1, start + split.left_len, len - split.left_len));
                    pending.push((left, start, split.left_len));
                }
            }
        }
        Tree {
            nodes,
            members: in_bag,
        }
    }
}

/// Fitted forest.
#[derive(Debug, Clone)]
pub struct ForestRegressor<T> {
    trees: Vec<Tree<T>>,
    targets: Vec<T>,
    dim: usize,
}

/// Trains `params.num_trees` trees; tree `b` uses its own seeded generator, so the fit is
/// identical regardless of thread count.
pub fn forest_fit<T: Real>(
    data: &LabeledDataset<T>,
    params: &ForestParams,
) -> Result<ForestRegressor<T>> {
    let n = data.len();
    let dim = data.dim();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "forest needs at least 2 training points, got {n}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("forest needs at least one feature".into()));
    }
    params.validate(dim)?;
    let grower = Grower {
        x: data.features(),
        y: data.targets(),
        mtry: params.mtry.unwrap_or(dim),
        min_node_size: params.min_node_size,
    };
    let bag = ((params.sample_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n);
    let trees = (0..params.num_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(params.seed, b as u64);
            let in_bag = sample(&mut rng, n, bag).into_vec();
            grower.grow(in_bag, &mut rng)
        })
        .collect();
    Ok(ForestRegressor {
        trees,
        targets: data.targets().to_vec(),
        dim,
    })
}

impl<T: Real> ForestRegressor<T> {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Dense weight vector over the training points.
    pub fn dense_weights(&self, x: ArrayView1<'_, T>) -> Result<Vec<T>> {
        check_query(x, self.dim)?;
        let mut w = vec![T::zero(); self.targets.len()];
        let b = T::of_usize(self.trees.len());
        for tree in &self.trees {
            let leaf = tree.leaf(x);
            let share = T::one() / (b * T::of_usize(leaf.len()));
            for &i in leaf {
                w[i] += share;
            }
        }
        Ok(w)
    }

    /// Leaf sizes reached by `x`, one per tree.
    pub fn leaf_sizes(&self, x: ArrayView1<'_, T>) -> Result<Vec<usize>> {
        check_query(x, self.dim)?;
        Ok(self.trees.iter().map(|t| t.leaf(x).len()).collect())
    }
}

impl<T: Real> WeightModel<T> for ForestRegressor<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn targets(&self) -> &[T] {
        &self.targets
    }

    fn weights(&self, x: ArrayView1<'_, T>) -> Result<Vec<(usize, T)>> {
        Ok(self
            .dense_weights(x)?
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w > T::zero())
            .collect())
    }
}

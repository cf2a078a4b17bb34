//! Bagged CART regression trees with random feature subsets at each split.
//!
//! Training rows are first put into a canonical (lexicographic) order so the
//! fitted forest does not depend on how the caller stored them. Tree `i`
//! draws its bootstrap sample and feature subsets from ChaCha8 stream `i + 1`
//! of the fit seed, which keeps the forest identical whether trees are grown
//! sequentially or in parallel.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::SeriesDataset;
use crate::{Error, Regressor, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Smallest number of (bootstrap) rows allowed in a leaf.
    pub min_leaf: usize,
    /// Candidate feature-subset sizes; `None` means `1..=d`.
    pub mtry_candidates: Option<Vec<usize>>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            min_leaf: 5,
            mtry_candidates: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
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

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    dim: usize,
    pub mtry: usize,
    pub oob_mse: f64,
}

/// Mean computed as an offset from the first value, so equal inputs return
/// that value exactly.
fn stable_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in values {
        let f = *first.get_or_insert(v);
        acc += v - f;
        n += 1;
    }
    first.map_or(0.0, |f| f + acc / n as f64)
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let v = stable_mean(idx.iter().map(|&i| self.y[i]));
        self.nodes.push(Node::Leaf(v));
        self.nodes.len() - 1
    }

    fn grow(&mut self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
        let n = idx.len();
        let y0 = self.y[idx[0]];
        if n < 2 * self.min_leaf || idx.iter().all(|&i| self.y[i] == y0) {
            return self.leaf(idx);
        }
        let d = self.x.ncols();
        let features = sample(rng, d, self.mtry.min(d));
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in features.iter() {
            sorted.sort_unstable_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for split in 1..n {
                left_sum += self.y[sorted[split - 1]];
                let lo = self.x[[sorted[split - 1], f]];
                let hi = self.x[[sorted[split], f]];
                if split < self.min_leaf || n - split < self.min_leaf || lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / split as f64 + right_sum * right_sum / (n - split) as f64 - base;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        // Stable partition keeps the recursion deterministic.
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(f64::NAN));
        let l = self.grow(&mut left, rng);
        let r = self.grow(&mut right, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        at
    }
}

struct GrownTree {
    tree: Tree,
    in_bag: Vec<bool>,
}

fn grow_tree(x: ArrayView2<'_, f64>, y: &[f64], mtry: usize, min_leaf: usize, seed: u64, index: usize) -> GrownTree {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut in_bag = vec![false; n];
    for &i in &idx {
        in_bag[i] = true;
    }
    let mut grower = Grower {
        x,
        y,
        mtry,
        min_leaf,
        nodes: Vec::new(),
    };
    grower.grow(&mut idx, &mut rng);
    GrownTree {
        tree: Tree { nodes: grower.nodes },
        in_bag,
    }
}

fn canonical_order(data: &SeriesDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| {
        let ra = data.x.row(a);
        let rb = data.x.row(b);
        ra.iter()
            .zip(rb.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(data.y[a].total_cmp(&data.y[b]))
    });
    idx
}

fn grow_forest(x: ArrayView2<'_, f64>, y: &[f64], cfg: &ForestConfig, mtry: usize, seed: u64) -> RandomForest {
    let grown: Vec<GrownTree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, mtry, cfg.min_leaf, seed, t))
        .collect();
    let n = y.len();
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    for g in &grown {
        for i in (0..n).filter(|&i| !g.in_bag[i]) {
            let row: Vec<f64> = x.row(i).to_vec();
            oob_sum[i] += g.tree.predict(&row);
            oob_count[i] += 1;
        }
    }
    let (sse, m) = (0..n).filter(|&i| oob_count[i] > 0).fold((0.0, 0usize), |(s, m), i| {
        (s + (y[i] - oob_sum[i] / oob_count[i] as f64).powi(2), m + 1)
    });
    RandomForest {
        trees: grown.into_iter().map(|g| g.tree).collect(),
        dim: x.ncols(),
        mtry,
        oob_mse: if m > 0 { sse / m as f64 } else { f64::NAN },
    }
}

/// Grows one forest per `mtry` candidate and keeps the one with the lowest
/// out-of-bag MSE (ties to the smaller `mtry`).
pub fn fit_rf(data: &SeriesDataset, cfg: &ForestConfig, seed: u64) -> Result<RandomForest> {
    let n = data.len();
    if n < 5 {
        return Err(Error::param(format!(
            "random forest needs at least 5 observations, got {n}"
        )));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::param("n_trees and min_leaf must be positive"));
    }
    let d = data.dim();
    let candidates: Vec<usize> = cfg.mtry_candidates.clone().unwrap_or_else(|| (1..=d).collect());
    if candidates.is_empty() || candidates.iter().any(|&m| m == 0 || m > d) {
        return Err(Error::param(format!("mtry candidates must lie in 1..={d}")));
    }
    let order = canonical_order(data);
    let x: Array2<f64> = data.x.select(ndarray::Axis(0), &order);
    let y: Vec<f64> = order.iter().map(|&i| data.y[i]).collect();
    let mut best: Option<RandomForest> = None;
    for &mtry in &candidates {
        let forest = grow_forest(x.view(), &y, cfg, mtry, seed);
        let better = match &best {
            None => true,
            Some(b) => {
                forest.oob_mse < b.oob_mse || (forest.oob_mse == b.oob_mse && mtry < b.mtry) || b.oob_mse.is_nan()
            }
        };
        if better {
            best = Some(forest);
        }
    }
    Ok(best.expect("candidates nonempty"))
}

impl Regressor for RandomForest {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        stable_mean(self.trees.iter().map(|t| t.predict(x)))
    }
}

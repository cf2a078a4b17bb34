use ndarray::{Array1, Array2};
use std::cmp::Ordering;

use super::{complement, contiguous_folds, sq_dist};
use crate::dgp::SeriesDataset;
use crate::{Error, Regressor, Result};

/// Unweighted k-nearest-neighbour average under Euclidean distance. Equal
/// distances are broken by the lower training-row index.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    x: Array2<f64>,
    y: Array1<f64>,
    pub k: usize,
    /// Cross-validated MSE of the selected `k` (NaN when fitted directly).
    pub cv_mse: f64,
}

impl KnnRegressor {
    /// `{5, 7, ..., 43}`.
    pub fn default_k_grid() -> Vec<usize> {
        (5..=43).step_by(2).collect()
    }

    /// Stores the sample with a fixed `k`.
    pub fn with_k(data: &SeriesDataset, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::param("kNN needs at least one observation"));
        }
        Ok(KnnRegressor {
            x: data.x.clone(),
            y: data.y.clone(),
            k,
            cv_mse: f64::NAN,
        })
    }
}

/// Training-row indices ordered by `(distance, index)`.
fn neighbour_order(rows: &[Vec<f64>], query: &[f64]) -> Vec<usize> {
    let dist: Vec<f64> = rows.iter().map(|r| sq_dist(r, query)).collect();
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_unstable_by(|&a, &b| by_distance(&dist, a, b));
    idx
}

fn by_distance(dist: &[f64], a: usize, b: usize) -> Ordering {
    dist[a].total_cmp(&dist[b]).then(a.cmp(&b))
}

/// Chooses `k` from `k_grid` by contiguous-block CV MSE (ties to the smaller
/// `k`) and stores the whole sample. `_seed` is accepted for interface
/// symmetry; the procedure is deterministic.
pub fn fit_knn(data: &SeriesDataset, k_grid: &[usize], folds: usize, _seed: u64) -> Result<KnnRegressor> {
    let n = data.len();
    let max_k = *k_grid.iter().max().ok_or_else(|| Error::param("k grid is empty"))?;
    if k_grid.contains(&0) {
        return Err(Error::param("k grid may not contain 0"));
    }
    if n <= max_k {
        return Err(Error::param(format!(
            "kNN needs more than {max_k} observations, got {n}"
        )));
    }
    if folds < 2 || n < folds {
        return Err(Error::param(format!("cannot form {folds} folds from {n} observations")));
    }
    let rows: Vec<Vec<f64>> = data.x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut sse = vec![0.0; k_grid.len()];
    for fold in contiguous_folds(n, folds) {
        let train = complement(n, &fold);
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        for v in fold {
            let order = neighbour_order(&train_rows, &rows[v]);
            let mut prefix = Vec::with_capacity(order.len() + 1);
            prefix.push(0.0);
            for &j in &order {
                prefix.push(prefix.last().copied().unwrap_or(0.0) + data.y[train[j]]);
            }
            for (s, &k) in sse.iter_mut().zip(k_grid) {
                let k = k.min(order.len());
                *s += (data.y[v] - prefix[k] / k as f64).powi(2);
            }
        }
    }
    let (best, best_sse) = sse.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| {
        let better = s < acc.1 || (s == acc.1 && k_grid[i] < k_grid[acc.0]);
        if better {
            (i, s)
        } else {
            acc
        }
    });
    let mut model = KnnRegressor::with_k(data, k_grid[best])?;
    model.cv_mse = best_sse / n as f64;
    Ok(model)
}

impl Regressor for KnnRegressor {
    fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Uses every training row when `k` exceeds the sample size.
    fn predict_row(&self, x: &[f64]) -> f64 {
        let n = self.y.len();
        let k = self.k.min(n);
        let dist: Vec<f64> = self
            .x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        let mut idx: Vec<usize> = (0..n).collect();
        if k < n {
            idx.select_nth_unstable_by(k - 1, |&a, &b| by_distance(&dist, a, b));
        }
        idx[..k].iter().map(|&i| self.y[i]).sum::<f64>() / k as f64
    }
}

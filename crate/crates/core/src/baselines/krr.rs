use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};

use super::{complement, contiguous_folds, sq_dist};
use crate::dgp::SeriesDataset;
use crate::regressor::check_cols;
use crate::{Error, Regressor, Result};

const JITTER: f64 = 1e-10;

/// Gaussian-kernel ridge regression `f(x) = Σ_i w_i exp(-γ |x - x_i|^2)`
/// with `(K + n α I) w = Y`.
#[derive(Debug, Clone)]
pub struct KernelRidge {
    x: Array2<f64>,
    weights: Vec<f64>,
    pub gamma: f64,
    pub alpha: f64,
    /// Cross-validated MSE of the selected pair (NaN when fitted directly).
    pub cv_mse: f64,
}

impl KernelRidge {
    /// `γ ∈ {2^-6, ..., 2^4}`.
    pub fn default_gamma_grid() -> Vec<f64> {
        (-6..=4).map(|e| 2f64.powi(e)).collect()
    }

    /// `α ∈ {10^-6, ..., 10^2}`.
    pub fn default_ridge_grid() -> Vec<f64> {
        (-6..=2).map(|e| 10f64.powi(e)).collect()
    }

    /// Fits with fixed hyperparameters.
    pub fn fit_fixed(data: &SeriesDataset, gamma: f64, alpha: f64) -> Result<Self> {
        if !(gamma > 0.0 && alpha > 0.0) {
            return Err(Error::param(format!(
                "KRR needs positive gamma and alpha, got {gamma}, {alpha}"
            )));
        }
        if data.is_empty() {
            return Err(Error::param("KRR needs at least one observation"));
        }
        let rows = rows_of(data.x());
        let dist = pairwise(&rows, &rows);
        let y: Vec<f64> = data.y.to_vec();
        let weights = solve_dual(&dist, &y, gamma, alpha)?;
        Ok(KernelRidge {
            x: data.x.clone(),
            weights,
            gamma,
            alpha,
            cv_mse: f64::NAN,
        })
    }
}

fn rows_of(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| sq_dist(&a[i], &b[j]))
}

fn solve_dual(dist: &DMatrix<f64>, y: &[f64], gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let ridge = n as f64 * alpha;
    let rhs = DVector::from_column_slice(y);
    for jitter in [0.0, JITTER] {
        let mut k = dist.map(|d| (-gamma * d).exp());
        for i in 0..n {
            k[(i, i)] += ridge + jitter;
        }
        if let Some(chol) = k.cholesky() {
            return Ok(chol.solve(&rhs).as_slice().to_vec());
        }
    }
    Err(Error::Numeric(format!(
        "kernel system is singular (gamma = {gamma}, alpha = {alpha})"
    )))
}

/// Grid search over `(γ, α)` by contiguous-block `folds`-fold CV, then a
/// refit on all rows. Ties keep the earliest grid pair. `_seed` is accepted
/// for interface symmetry; the procedure is deterministic.
pub fn fit_krr(
    data: &SeriesDataset,
    folds: usize,
    gamma_grid: &[f64],
    ridge_grid: &[f64],
    _seed: u64,
) -> Result<KernelRidge> {
    let n = data.len();
    if folds < 2 {
        return Err(Error::param("KRR cross-validation needs at least 2 folds"));
    }
    if n < folds {
        return Err(Error::param(format!(
            "KRR needs at least {folds} observations, got {n}"
        )));
    }
    if gamma_grid.is_empty() || ridge_grid.is_empty() {
        return Err(Error::param("KRR grids must be nonempty"));
    }
    let rows = rows_of(data.x());
    let y = data.y.to_vec();
    let mut sse = vec![0.0; gamma_grid.len() * ridge_grid.len()];
    for fold in contiguous_folds(n, folds) {
        let train = complement(n, &fold);
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let val_rows: Vec<Vec<f64>> = fold.clone().map(|i| rows[i].clone()).collect();
        let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let d_train = pairwise(&train_rows, &train_rows);
        let d_val = pairwise(&val_rows, &train_rows);
        for (gi, &gamma) in gamma_grid.iter().enumerate() {
            let k_val = d_val.map(|d| (-gamma * d).exp());
            for (ai, &alpha) in ridge_grid.iter().enumerate() {
                let w = DVector::from_vec(solve_dual(&d_train, &train_y, gamma, alpha)?);
                let pred = &k_val * w;
                sse[gi * ridge_grid.len() + ai] += fold
                    .clone()
                    .zip(pred.iter())
                    .map(|(i, p)| (y[i] - p).powi(2))
                    .sum::<f64>();
            }
        }
    }
    let (best, best_sse) = sse
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let gamma = gamma_grid[best / ridge_grid.len()];
    let alpha = ridge_grid[best % ridge_grid.len()];
    let mut model = KernelRidge::fit_fixed(data, gamma, alpha)?;
    model.cv_mse = best_sse / n as f64;
    Ok(model)
}

impl Regressor for KernelRidge {
    fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.x
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(r, w)| {
                let d: f64 = r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
                w * (-self.gamma * d).exp()
            })
            .sum()
    }

    fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_cols(self.input_dim(), x)?;
        Ok(x.rows()
            .into_iter()
            .map(|r| self.predict_row(r.as_slice().unwrap_or(&r.to_vec())))
            .collect())
    }
}

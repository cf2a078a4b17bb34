use ndarray::{Array1, ArrayView2};

use crate::net::{Mlp, TruncatedEstimator};
use crate::{Error, Result};

/// A fitted regression function `R^d -> R`.
pub trait Regressor: Send + Sync {
    fn input_dim(&self) -> usize;

    /// Prediction at a single point of length `input_dim()`.
    fn predict_row(&self, x: &[f64]) -> f64;

    fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_cols(self.input_dim(), x)?;
        let mut buf = vec![0.0; x.ncols()];
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                for (b, v) in buf.iter_mut().zip(row) {
                    *b = *v;
                }
                self.predict_row(&buf)
            })
            .collect())
    }
}

pub(crate) fn check_cols(expected: usize, x: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::dim(format!(
            "inputs have {} columns, model expects {expected}",
            x.ncols()
        )));
    }
    Ok(())
}

impl Regressor for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.forward(x).expect("input dimension checked by caller")
    }

    fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.forward_batch(x)
    }
}

impl Regressor for TruncatedEstimator {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict(x).expect("input dimension checked by caller")
    }

    fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.predict_batch(x)
    }
}

/// Wraps a closure as a [`Regressor`].
pub struct FnRegressor<F> {
    dim: usize,
    f: F,
}

impl<F> FnRegressor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnRegressor { dim, f }
    }
}

impl<F> Regressor for FnRegressor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

//! Comparator regressors: Gaussian kernel ridge regression, k-nearest
//! neighbours and a random forest of CART trees, each with its own tuning
//! procedure. Cross-validation folds are contiguous blocks so that no fold
//! mixes observations from distant parts of the series.

mod forest;
mod knn;
mod krr;

pub use forest::{fit_rf, ForestConfig, RandomForest};
pub use knn::{fit_knn, KnnRegressor};
pub use krr::{fit_krr, KernelRidge};

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Regressor, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Krr,
    Knn,
    Rf,
}

/// A fitted baseline.
#[derive(Debug, Clone)]
pub enum Predictor {
    Krr(KernelRidge),
    Knn(KnnRegressor),
    Rf(RandomForest),
}

impl Predictor {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Predictor::Krr(_) => BaselineKind::Krr,
            Predictor::Knn(_) => BaselineKind::Knn,
            Predictor::Rf(_) => BaselineKind::Rf,
        }
    }

    fn inner(&self) -> &dyn Regressor {
        match self {
            Predictor::Krr(m) => m,
            Predictor::Knn(m) => m,
            Predictor::Rf(m) => m,
        }
    }
}

impl Regressor for Predictor {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.inner().predict_row(x)
    }

    fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.inner().predict_rows(x)
    }
}

/// `k` contiguous validation blocks over `0..n`; the first `n % k` blocks
/// get one extra row.
pub(crate) fn contiguous_folds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Row indices outside `fold`.
pub(crate) fn complement(n: usize, fold: &std::ops::Range<usize>) -> Vec<usize> {
    (0..fold.start).chain(fold.end..n).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

//! Nonlinear autoregressive data-generating processes
//! `Y_t = m(X_t) + η(X_t) ε_t` with `X_t = (Y_{t-1}, ..., Y_{t-d})`,
//! lag embedding, and stability diagnostics (Lyapunov drift and the
//! linear growth envelope `|m(x)| <= c_0 + Σ c_i |x_i|`).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::quadrature::{halton, GaussHermite};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpName {
    Expar,
    Tar,
    Far,
    Aar,
    Sim,
    SimV,
    LinearAr,
    Custom,
}

impl DgpName {
    /// Lag order fixed by the model formula, if any.
    pub fn fixed_lag(self) -> Option<usize> {
        match self {
            DgpName::Expar | DgpName::Tar | DgpName::Far | DgpName::Aar | DgpName::Sim => Some(2),
            DgpName::SimV => Some(4),
            DgpName::LinearAr | DgpName::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DgpName::Expar => "expar",
            DgpName::Tar => "tar",
            DgpName::Far => "far",
            DgpName::Aar => "aar",
            DgpName::Sim => "sim",
            DgpName::SimV => "sim_v",
            DgpName::LinearAr => "linear_ar",
            DgpName::Custom => "custom",
        }
    }
}

type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// User-supplied mean and (optionally) volatility functions.
#[derive(Clone)]
pub struct CustomModel {
    pub mean: StateFn,
    pub volatility: Option<StateFn>,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("volatility", &self.volatility.is_some())
            .finish_non_exhaustive()
    }
}

/// A named instance of the AR model. Serialises as
/// `{"name": "sim_v", "d": 4, "params": {"v": 0.5}, "noise_sd": 1.0}`.
///
/// `linear_ar` reads coefficients `a1..ad` (missing ones are 0) and an
/// optional intercept `c` from `params`; `sim_v` reads `v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub name: DgpName,
    pub d: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub noise_sd: f64,
    #[serde(skip)]
    pub custom: Option<CustomModel>,
}

impl PartialEq for DgpSpec {
    fn eq(&self, other: &Self) -> bool {
        let custom_eq = match (&self.custom, &other.custom) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(&a.mean, &b.mean),
            _ => false,
        };
        self.name == other.name
            && self.d == other.d
            && self.params == other.params
            && self.noise_sd == other.noise_sd
            && custom_eq
    }
}

impl DgpSpec {
    fn named(name: DgpName, noise_sd: f64) -> Self {
        DgpSpec {
            name,
            d: name.fixed_lag().expect("named model"),
            params: BTreeMap::new(),
            noise_sd,
            custom: None,
        }
    }

    pub fn expar() -> Self {
        Self::named(DgpName::Expar, 0.2)
    }

    pub fn tar() -> Self {
        Self::named(DgpName::Tar, 1.0)
    }

    pub fn far() -> Self {
        Self::named(DgpName::Far, 0.5)
    }

    pub fn aar() -> Self {
        Self::named(DgpName::Aar, 1.0)
    }

    pub fn sim() -> Self {
        Self::named(DgpName::Sim, 0.1)
    }

    pub fn sim_v(v: f64) -> Self {
        let mut spec = Self::named(DgpName::SimV, 1.0);
        spec.params.insert("v".into(), v);
        spec
    }

    /// `Y_t = c + Σ a_i Y_{t-i} + noise_sd ε_t`.
    pub fn linear_ar(coefficients: &[f64], intercept: f64, noise_sd: f64) -> Self {
        let mut params: BTreeMap<String, f64> = coefficients
            .iter()
            .enumerate()
            .map(|(i, &a)| (format!("a{}", i + 1), a))
            .collect();
        if intercept != 0.0 {
            params.insert("c".into(), intercept);
        }
        DgpSpec {
            name: DgpName::LinearAr,
            d: coefficients.len(),
            params,
            noise_sd,
            custom: None,
        }
    }

    pub fn custom<F>(d: usize, mean: F, noise_sd: f64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        DgpSpec {
            name: DgpName::Custom,
            d,
            params: BTreeMap::new(),
            noise_sd,
            custom: Some(CustomModel {
                mean: Arc::new(mean),
                volatility: None,
            }),
        }
    }

    /// Replaces the constant volatility by `η(x)` (custom models only).
    pub fn with_volatility<F>(mut self, eta: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        match self.custom.as_mut() {
            Some(c) => {
                c.volatility = Some(Arc::new(eta));
                Ok(self)
            }
            None => Err(Error::param(
                "a volatility function can only be attached to a custom model",
            )),
        }
    }

    /// The eight models of the simulation study.
    pub fn study_models() -> Vec<DgpSpec> {
        vec![
            Self::expar(),
            Self::tar(),
            Self::far(),
            Self::aar(),
            Self::sim(),
            Self::sim_v(0.5),
            Self::sim_v(1.0),
            Self::sim_v(5.0),
        ]
    }

    /// Short identifier used in reports, e.g. `tar` or `sim_v0.5`.
    pub fn label(&self) -> String {
        match self.name {
            DgpName::SimV => format!("sim_v{}", self.params.get("v").copied().unwrap_or(f64::NAN)),
            other => other.as_str().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::dim("lag order d must be at least 1"));
        }
        if let Some(d) = self.name.fixed_lag() {
            if self.d != d {
                return Err(Error::dim(format!(
                    "model {} has lag order {d}, spec says {}",
                    self.name.as_str(),
                    self.d
                )));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::param(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        match self.name {
            DgpName::SimV => {
                if !self.params.contains_key("v") {
                    return Err(Error::param("sim_v requires parameter v"));
                }
            }
            DgpName::LinearAr => {
                for key in self.params.keys() {
                    let ok = key == "c"
                        || key
                            .strip_prefix('a')
                            .and_then(|i| i.parse::<usize>().ok())
                            .is_some_and(|i| (1..=self.d).contains(&i));
                    if !ok {
                        return Err(Error::param(format!("unknown linear_ar parameter {key}")));
                    }
                }
            }
            DgpName::Custom if self.custom.is_none() => {
                return Err(Error::param("custom model has no mean function attached"));
            }
            _ => {}
        }
        Ok(())
    }

    fn param(&self, key: &str) -> f64 {
        self.params.get(key).copied().unwrap_or(0.0)
    }

    /// `m(x)` without dimension checks.
    fn mean_unchecked(&self, x: &[f64]) -> f64 {
        match self.name {
            DgpName::Expar => {
                let (y1, y2) = (x[0], x[1]);
                let e = (-3.89 * y1 * y1).exp();
                let a1 = 0.138 + (0.316 + 0.982 * y1) * e;
                let a2 = -0.437 - (0.659 + 1.260 * y1) * e;
                a1 * y1 + a2 * y2
            }
            DgpName::Tar => {
                let (y1, y2) = (x[0], x[1]);
                // Coefficients in tenths keep integer-valued inputs exact.
                let (b1, b2) = if y1 <= 1.0 { (4.0, -6.0) } else { (-8.0, 2.0) };
                (b1 * y1 + b2 * y2) / 10.0
            }
            DgpName::Far => {
                let (y1, y2) = (x[0], x[1]);
                -y2 * (-y2 * y2 / 2.0).exp() + (1.5 * y2).cos() / (1.0 + y2 * y2) * y1
            }
            DgpName::Aar => {
                let (y1, y2) = (x[0], x[1]);
                let logistic = 1.0 / (1.0 + (-3.0 * (y2 - 2.0)).exp());
                4.0 * y1 / (1.0 + 0.8 * y1 * y1) + logistic
            }
            DgpName::Sim => {
                let (y1, y2) = (x[0], x[1]);
                let z = (8.0 * y1 + 6.0 * y2 - 6.0) / 10.0;
                (-8.0 * z * z).exp() + 0.5 * (2.0 * std::f64::consts::PI * z).sin() * y1
            }
            DgpName::SimV => {
                let v = self.param("v");
                let z = x[0] + x[1] - x[2] - x[3];
                (std_normal_cdf(-v * z) - 0.5) * x[0] + (std_normal_cdf(2.0 * v * z) - 0.6) * x[1]
            }
            DgpName::LinearAr => {
                self.param("c")
                    + x.iter()
                        .enumerate()
                        .map(|(i, xi)| self.param(&format!("a{}", i + 1)) * xi)
                        .sum::<f64>()
            }
            DgpName::Custom => self.custom.as_ref().map_or(0.0, |c| (c.mean)(x)),
        }
    }

    /// `η(x)`: the constant `noise_sd` unless a custom volatility is attached.
    pub fn volatility(&self, x: &[f64]) -> f64 {
        match self.custom.as_ref().and_then(|c| c.volatility.as_ref()) {
            Some(eta) => eta(x),
            None => self.noise_sd,
        }
    }
}

/// `Φ(x)`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Oracle conditional mean `m(x)`.
pub fn mean_function(spec: &DgpSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.d {
        return Err(Error::dim(format!(
            "model {} expects {} lags, got {}",
            spec.label(),
            spec.d,
            x.len()
        )));
    }
    if spec.name == DgpName::Custom && spec.custom.is_none() {
        return Err(Error::param("custom model has no mean function attached"));
    }
    Ok(spec.mean_unchecked(x))
}

/// Innovation scale of the study models: EXPAR 0.2, FAR 0.5, SIM 0.1, the
/// rest 1. Other models report their configured `noise_sd`.
pub fn noise_sd_of(spec: &DgpSpec) -> f64 {
    match spec.name {
        DgpName::Expar => 0.2,
        DgpName::Far => 0.5,
        DgpName::Sim => 0.1,
        DgpName::Tar | DgpName::Aar | DgpName::SimV => 1.0,
        DgpName::LinearAr | DgpName::Custom => spec.noise_sd,
    }
}

/// Simulates `burn_in + t` steps from zero initial lags and returns the last
/// `t` values. Innovations are standard normal draws from a ChaCha8 stream
/// seeded with `seed`.
pub fn simulate(spec: &DgpSpec, t: usize, burn_in: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if t == 0 {
        return Err(Error::param("series length T must be at least 1"));
    }
    let d = spec.d;
    let total = burn_in + t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Lags most recent first.
    let mut state = vec![0.0; d];
    let mut out = Vec::with_capacity(t);
    for step in 0..total {
        let eps: f64 = rng.sample(StandardNormal);
        let y = spec.mean_unchecked(&state) + spec.volatility(&state) * eps;
        if !y.is_finite() {
            return Err(Error::Simulation { t: step + 1 });
        }
        state.rotate_right(1);
        state[0] = y;
        if step >= burn_in {
            out.push(y);
        }
    }
    Ok(out)
}

/// Regression pairs `(X_t, Y_t)` built from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    /// Row `t` is `(Y_{t-1}, ..., Y_{t-d})`, most recent first.
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub origin: Option<DgpSpec>,
}

impl SeriesDataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim(format!(
                "{} input rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        Ok(SeriesDataset { x, y, origin: None })
    }

    pub fn with_origin(mut self, spec: DgpSpec) -> Self {
        self.origin = Some(spec);
        self
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    /// Chronological split into rows `[0, at)` and `[at, n)`.
    pub fn split_at(&self, at: usize) -> (SeriesDataset, SeriesDataset) {
        let at = at.min(self.len());
        let head = SeriesDataset {
            x: self.x.slice(s![..at, ..]).to_owned(),
            y: self.y.slice(s![..at]).to_owned(),
            origin: self.origin.clone(),
        };
        let tail = SeriesDataset {
            x: self.x.slice(s![at.., ..]).to_owned(),
            y: self.y.slice(s![at..]).to_owned(),
            origin: self.origin.clone(),
        };
        (head, tail)
    }

    pub fn select(&self, rows: &[usize]) -> SeriesDataset {
        SeriesDataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            origin: self.origin.clone(),
        }
    }

    /// Unbiased sample variance of the responses.
    pub fn response_variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.y.sum() / n as f64;
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}

/// Lag embedding of `series` with order `d`: `n = len - d` rows.
pub fn embed(series: &[f64], d: usize) -> Result<SeriesDataset> {
    if d == 0 {
        return Err(Error::dim("lag order d must be at least 1"));
    }
    if series.len() < d + 1 {
        return Err(Error::dim(format!(
            "series of length {} is too short for lag order {d}",
            series.len()
        )));
    }
    let n = series.len() - d;
    let x = Array2::from_shape_fn((n, d), |(t, j)| series[d + t - 1 - j]);
    let y = Array1::from(series[d..].to_vec());
    SeriesDataset::new(x, y)
}

/// Affine map of each input coordinate onto `[0, 1]` using training ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    lo: Vec<f64>,
    span: Vec<f64>,
}

impl InputScaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mut lo = Vec::with_capacity(x.ncols());
        let mut span = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo.push(min);
            span.push(if max > min { max - min } else { 1.0 });
        }
        InputScaler { lo, span }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.lo[j]) / self.span[j]);
        }
        out
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.lo[j]) / self.span[j])
            .collect()
    }
}

/// Outcome of a Monte Carlo drift check for `V(x) = Σ b_i |x_i|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max_x (E[V(X_{t+1}) | X_t = x] - c_0 - 1) / V(x)` over sampled states.
    pub gamma_hat: f64,
    /// `1 - gamma_hat`.
    pub margin: f64,
    pub pass: bool,
}

fn validate_envelope(spec: &DgpSpec, c: &[f64]) -> Result<()> {
    if c.len() != spec.d + 1 {
        return Err(Error::param(format!(
            "envelope needs {} coefficients c_0..c_d, got {}",
            spec.d + 1,
            c.len()
        )));
    }
    if c.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::param("envelope coefficients must be nonnegative"));
    }
    Ok(())
}

/// Estimates the drift ratio of `V` over `n_mc` states whose radii span
/// `[1e-2, 1e3]` log-uniformly. The one-step conditional expectation is
/// taken by 21-node Gauss–Hermite quadrature over the innovation.
pub fn drift_check(spec: &DgpSpec, c: &[f64], b: &[f64], n_mc: usize, seed: u64) -> Result<DriftReport> {
    spec.validate()?;
    validate_envelope(spec, c)?;
    let d = spec.d;
    if b.len() != d {
        return Err(Error::param(format!(
            "Lyapunov weights need {d} entries, got {}",
            b.len()
        )));
    }
    let slope_sum: f64 = c[1..].iter().sum();
    if !(slope_sum < 1.0) {
        return Err(Error::param(format!(
            "sum of envelope slopes c_1..c_d must be < 1, got {slope_sum}"
        )));
    }
    if b.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::param("Lyapunov weights b_i must be positive"));
    }
    for i in 1..d {
        // 0-based: b[i] corresponds to b_{i+1}, c[i+1] to c_{i+1}.
        let tail: f64 = c[i + 1..].iter().sum();
        let upper = b[i - 1] - c[i];
        if !(tail < b[i] && b[i] < upper) {
            return Err(Error::param(format!(
                "Lyapunov weight b_{} = {} must lie in ({tail}, {upper})",
                i + 1,
                b[i]
            )));
        }
    }
    if n_mc == 0 {
        return Err(Error::param("drift check needs at least one sampled state"));
    }

    let gh = GaussHermite::new(21);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (log_lo, log_hi) = (1e-2f64.ln(), 1e3f64.ln());
    let mut gamma_hat = f64::NEG_INFINITY;
    let mut x = vec![0.0f64; d];
    for _ in 0..n_mc {
        let mut norm = 0.0f64;
        while norm == 0.0 {
            for xi in x.iter_mut() {
                *xi = rng.random_range(-1.0..1.0);
            }
            norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
        let radius = (log_lo + (log_hi - log_lo) * rng.random::<f64>()).exp();
        for xi in x.iter_mut() {
            *xi *= radius / norm;
        }
        let v: f64 = b.iter().zip(&x).map(|(bi, xi)| bi * xi.abs()).sum();
        let m = spec.mean_unchecked(&x);
        let eta = spec.volatility(&x);
        let next_first = b[0] * gh.expect(|z| (m + eta * z).abs());
        let shifted: f64 = (1..d).map(|i| b[i] * x[i - 1].abs()).sum();
        let ratio = (next_first + shifted - c[0] - 1.0) / v;
        gamma_hat = gamma_hat.max(ratio);
    }
    Ok(DriftReport {
        gamma_hat,
        margin: 1.0 - gamma_hat,
        pass: gamma_hat < 1.0,
    })
}

/// Checks `|m(x)| <= c_0 + Σ c_i |x_i|` at `n_points` Halton points in
/// `[-box_radius, box_radius]^d`, randomly shifted modulo 1 by `seed`.
pub fn membership_audit(spec: &DgpSpec, c: &[f64], n_points: usize, box_radius: f64, seed: u64) -> Result<bool> {
    spec.validate()?;
    validate_envelope(spec, c)?;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random()).collect();
    let mut x = vec![0.0; d];
    for i in 0..n_points as u64 {
        let u = halton(i, d);
        for j in 0..d {
            let v = (u[j] + shift[j]).fract();
            x[j] = box_radius * (2.0 * v - 1.0);
        }
        let envelope = c[0] + c[1..].iter().zip(&x).map(|(ci, xi)| ci * xi.abs()).sum::<f64>();
        if spec.mean_unchecked(&x).abs() > envelope {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Writes a single-column CSV with header `y`.
pub fn write_series_csv(path: &Path, series: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(["y"])?;
    for v in series {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?;
    if headers.len() != 1 || &headers[0] != "y" {
        return Err(Error::param(format!(
            "series CSV must have the single header \"y\", found {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let v: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("row {}: cannot parse {:?} as a number", i + 1, &rec[0])))?;
        out.push(v);
    }
    Ok(out)
}

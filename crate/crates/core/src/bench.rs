//! Monte Carlo comparison of the network estimators against the baselines.
//!
//! Replication `r` simulates its training path with seed `base_seed ^ r`
//! and a fresh evaluation path with seed `base_seed ^ r ^ EVAL_SEED_SALT`.
//! Every estimator in a replication sees the same training data and is
//! scored on the same evaluation path against the noiseless mean function.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_knn, fit_krr, fit_rf, ForestConfig, KernelRidge, KnnRegressor};
use crate::dgp::{embed, mean_function, simulate, DgpSpec, InputScaler, SeriesDataset};
use crate::net::{Activation, Architecture};
use crate::train::{fit_npdnn, fit_spdnn, FitResult, TrainConfig};
use crate::{Error, Regressor, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// XOR-ed into the training seed to derive the evaluation seed.
pub const EVAL_SEED_SALT: u64 = 0x9E37;

pub const DEFAULT_BURN_IN: usize = 100;

pub const CSV_HEADER: [&str; 11] = [
    "model",
    "replication",
    "estimator",
    "empirical_l2",
    "fit_seconds",
    "selected_lambda",
    "selected_k",
    "selected_gamma",
    "selected_alpha",
    "selected_mtry",
    "epochs",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Krr,
    Knn,
    Rf,
    Npdnn,
    Spdnn,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Krr,
        Estimator::Knn,
        Estimator::Rf,
        Estimator::Npdnn,
        Estimator::Spdnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Krr => "krr",
            Estimator::Knn => "knn",
            Estimator::Rf => "rf",
            Estimator::Npdnn => "npdnn",
            Estimator::Spdnn => "spdnn",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hidden layers of the networks; the input width comes from the model's
/// lag order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkShape {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape {
            widths: vec![128; 3],
            activation: Activation::Relu,
        }
    }
}

impl NetworkShape {
    pub fn architecture(&self, input_dim: usize) -> Result<Architecture> {
        Architecture::new(input_dim, self.widths.clone(), self.activation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Contiguous CV folds for KRR and kNN.
    pub folds: usize,
    pub knn_k_grid: Vec<usize>,
    pub krr_gamma_grid: Vec<f64>,
    pub krr_ridge_grid: Vec<f64>,
    pub forest: ForestConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            folds: 5,
            knn_k_grid: KnnRegressor::default_k_grid(),
            krr_gamma_grid: KernelRidge::default_gamma_grid(),
            krr_ridge_grid: KernelRidge::default_ridge_grid(),
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub dgp: DgpSpec,
    /// Number of regression pairs per training sample.
    #[serde(rename = "T", default = "default_t")]
    pub t: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: NetworkShape,
    #[serde(default)]
    pub baselines: BaselineConfig,
    /// SPDNN λ grid; `None` uses the variance-scaled default grid.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Map inputs affinely onto `[0, 1]^d` using the training ranges.
    #[serde(default)]
    pub rescale_inputs: bool,
    /// Fill `fit_seconds`. Off by default because timings make reports
    /// differ between otherwise identical runs.
    #[serde(default)]
    pub record_timing: bool,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_t() -> usize {
    400
}
fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}
fn default_n_eval() -> usize {
    100_000
}
fn default_replications() -> usize {
    500
}
fn all_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

impl BenchConfig {
    pub fn new(dgp: DgpSpec) -> Self {
        BenchConfig {
            schema_version: SCHEMA_VERSION,
            dgp,
            t: default_t(),
            burn_in: default_burn_in(),
            n_eval: default_n_eval(),
            replications: default_replications(),
            estimators: all_estimators(),
            base_seed: 0,
            train: TrainConfig::default(),
            arch: NetworkShape::default(),
            baselines: BaselineConfig::default(),
            lambda_grid: None,
            rescale_inputs: false,
            record_timing: false,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::param(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.dgp.validate()?;
        if self.dgp.custom.is_none() && self.dgp.name == crate::dgp::DgpName::Custom {
            return Err(Error::param("custom models cannot be benchmarked from a config file"));
        }
        if self.replications == 0 || self.n_eval == 0 {
            return Err(Error::param("replications and n_eval must be at least 1"));
        }
        if self.t < 2 {
            return Err(Error::param(format!("T must be at least 2, got {}", self.t)));
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(Error::param("estimators may not repeat"));
        }
        self.train.validate()?;
        self.arch.architecture(self.dgp.d)?;
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() || g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::param("lambda grid must be nonempty with nonnegative entries"));
            }
        }
        Ok(())
    }

    /// Seed of replication `rep`'s training path and fits.
    pub fn training_seed(&self, rep: usize) -> u64 {
        self.base_seed ^ rep as u64
    }

    /// Seed of replication `rep`'s evaluation path.
    pub fn evaluation_seed(&self, rep: usize) -> u64 {
        self.training_seed(rep) ^ EVAL_SEED_SALT
    }

    /// Canonical JSON: struct fields in declaration order, map keys sorted.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// 64-bit FNV-1a of [`canonical_json`](Self::canonical_json), as 16 hex digits.
    pub fn digest(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv1a64(self.canonical_json()?.as_bytes())))
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Covariates of an evaluation path and the oracle mean at each of them.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub x: Array2<f64>,
    pub target: Array1<f64>,
}

impl EvalSet {
    /// Simulates `n_eval + d` values after `burn_in` steps and embeds them,
    /// giving exactly `n_eval` points.
    pub fn generate(spec: &DgpSpec, n_eval: usize, burn_in: usize, seed: u64) -> Result<Self> {
        if n_eval == 0 {
            return Err(Error::param("n_eval must be at least 1"));
        }
        let series = simulate(spec, n_eval + spec.d, burn_in, seed)?;
        let data = embed(&series, spec.d)?;
        let target = data
            .x
            .rows()
            .into_iter()
            .map(|r| mean_function(spec, r.as_slice().expect("standard layout")))
            .collect::<Result<Array1<f64>>>()?;
        Ok(EvalSet { x: data.x, target })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Mean squared deviation of `pred` from the oracle.
    pub fn l2<R: Regressor + ?Sized>(&self, pred: &R) -> Result<f64> {
        let p = pred.predict_rows(self.x.view())?;
        self.l2_of(&p)
    }

    pub fn l2_of(&self, predictions: &Array1<f64>) -> Result<f64> {
        if predictions.len() != self.len() {
            return Err(Error::dim(format!(
                "{} predictions for {} points",
                predictions.len(),
                self.len()
            )));
        }
        let sse: f64 = predictions.iter().zip(&self.target).map(|(p, m)| (p - m).powi(2)).sum();
        Ok(sse / self.len() as f64)
    }
}

/// Empirical L2 error of `pred` against the mean function of `spec` on a
/// fresh path of `n_eval` points (burn-in [`DEFAULT_BURN_IN`]).
pub fn empirical_l2<R: Regressor + ?Sized>(pred: &R, spec: &DgpSpec, n_eval: usize, seed: u64) -> Result<f64> {
    EvalSet::generate(spec, n_eval, DEFAULT_BURN_IN, seed)?.l2(pred)
}

/// One (replication, estimator) cell. Hyperparameters that do not apply
/// are `None`; a failed cell carries `error` and no score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub model: String,
    pub replication: usize,
    pub estimator: Estimator,
    pub empirical_l2: Option<f64>,
    pub fit_seconds: Option<f64>,
    pub selected_lambda: Option<f64>,
    pub selected_k: Option<usize>,
    pub selected_gamma: Option<f64>,
    pub selected_alpha: Option<f64>,
    pub selected_mtry: Option<usize>,
    pub epochs: Option<usize>,
    pub error: Option<String>,
}

impl BenchRow {
    fn empty(model: String, replication: usize, estimator: Estimator) -> Self {
        BenchRow {
            model,
            replication,
            estimator,
            empirical_l2: None,
            fit_seconds: None,
            selected_lambda: None,
            selected_k: None,
            selected_gamma: None,
            selected_alpha: None,
            selected_mtry: None,
            epochs: None,
            error: None,
        }
    }

    fn failed(mut self, err: &Error) -> Self {
        self.empirical_l2 = None;
        self.error = Some(err.to_string());
        self
    }

    fn csv_record(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(String::new, T::to_string)
        }
        vec![
            self.model.clone(),
            self.replication.to_string(),
            self.estimator.to_string(),
            opt(&self.empirical_l2),
            opt(&self.fit_seconds),
            opt(&self.selected_lambda),
            opt(&self.selected_k),
            opt(&self.selected_gamma),
            opt(&self.selected_alpha),
            opt(&self.selected_mtry),
            opt(&self.epochs),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Rows of `estimator` that produced a score.
    pub fn scores(&self, estimator: Estimator) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .filter_map(|r| r.empirical_l2)
            .collect()
    }

    pub fn median(&self, estimator: Estimator) -> Option<f64> {
        median(&self.scores(estimator))
    }

    pub fn failures(&self) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Applies the optional input rescaling before delegating.
struct Scaled<'a> {
    scaler: Option<&'a InputScaler>,
    inner: &'a dyn Regressor,
}

impl Regressor for Scaled<'_> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        match self.scaler {
            Some(s) => self.inner.predict_row(&s.transform_row(x)),
            None => self.inner.predict_row(x),
        }
    }

    fn predict_rows(&self, x: ndarray::ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match self.scaler {
            Some(s) => self.inner.predict_rows(s.transform(x).view()),
            None => self.inner.predict_rows(x),
        }
    }
}

fn network_row(row: &mut BenchRow, fit: &FitResult) {
    row.selected_lambda = fit.selected_lambda;
    row.epochs = Some(fit.epochs_used);
}

fn fit_and_score(
    cfg: &BenchConfig,
    estimator: Estimator,
    data: &SeriesDataset,
    scaler: Option<&InputScaler>,
    eval: &EvalSet,
    seed: u64,
    row: &mut BenchRow,
) -> Result<f64> {
    let b = &cfg.baselines;
    let start = Instant::now();
    let model: Box<dyn Regressor> = match estimator {
        Estimator::Krr => {
            let m = fit_krr(data, b.folds, &b.krr_gamma_grid, &b.krr_ridge_grid, seed)?;
            row.selected_gamma = Some(m.gamma);
            row.selected_alpha = Some(m.alpha);
            Box::new(m)
        }
        Estimator::Knn => {
            let m = fit_knn(data, &b.knn_k_grid, b.folds, seed)?;
            row.selected_k = Some(m.k);
            Box::new(m)
        }
        Estimator::Rf => {
            let m = fit_rf(data, &b.forest, seed)?;
            row.selected_mtry = Some(m.mtry);
            Box::new(m)
        }
        Estimator::Npdnn | Estimator::Spdnn => {
            let arch = cfg.arch.architecture(data.dim())?;
            let mut train = cfg.train.clone();
            train.seed = seed;
            let fit = if estimator == Estimator::Npdnn {
                fit_npdnn(data, &arch, &train)?
            } else {
                fit_spdnn(data, &arch, &train, cfg.lambda_grid.as_deref())?
            };
            network_row(row, &fit);
            Box::new(fit.estimator)
        }
    };
    if cfg.record_timing {
        row.fit_seconds = Some(start.elapsed().as_secs_f64());
    }
    let l2 = eval.l2(&Scaled {
        scaler,
        inner: model.as_ref(),
    })?;
    if !l2.is_finite() {
        return Err(Error::Numeric(format!("{estimator} produced non-finite predictions")));
    }
    Ok(l2)
}

/// Simulates replication `rep`, fits every configured estimator on the same
/// sample and scores each on the same evaluation path. Failures are recorded
/// in the affected rows.
pub fn run_replication(cfg: &BenchConfig, rep: usize) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if rep >= cfg.replications {
        return Err(Error::param(format!(
            "replication index {rep} out of range for {} replications",
            cfg.replications
        )));
    }
    let label = cfg.dgp.label();
    let seed = cfg.training_seed(rep);
    let prepared = simulate(&cfg.dgp, cfg.t + cfg.dgp.d, cfg.burn_in, seed)
        .and_then(|s| embed(&s, cfg.dgp.d))
        .and_then(|data| {
            let eval = EvalSet::generate(&cfg.dgp, cfg.n_eval, cfg.burn_in, cfg.evaluation_seed(rep))?;
            Ok((data, eval))
        });
    let (data, eval) = match prepared {
        Ok(p) => p,
        Err(e) => {
            return Ok(cfg
                .estimators
                .iter()
                .map(|&est| BenchRow::empty(label.clone(), rep, est).failed(&e))
                .collect())
        }
    };
    let data = data.with_origin(cfg.dgp.clone());
    let scaler = cfg.rescale_inputs.then(|| InputScaler::fit(data.x()));
    let fit_data = match &scaler {
        Some(s) => SeriesDataset::new(s.transform(data.x()), data.y.clone())?,
        None => data,
    };
    Ok(cfg
        .estimators
        .iter()
        .map(|&est| {
            let mut row = BenchRow::empty(label.clone(), rep, est);
            match fit_and_score(cfg, est, &fit_data, scaler.as_ref(), &eval, seed, &mut row) {
                Ok(l2) => {
                    row.empirical_l2 = Some(l2);
                    row
                }
                Err(e) => row.failed(&e),
            }
        })
        .collect())
}

/// Runs every replication on a pool of `threads` workers (0 = rayon's
/// default). Rows are ordered by replication, then by the configured
/// estimator order, regardless of scheduling.
pub fn run_benchmark(cfg: &BenchConfig, threads: usize) -> Result<BenchReport> {
    run_benchmark_with(cfg, threads, |_, _| {})
}

/// As [`run_benchmark`], calling `on_done(rep, rows)` as each replication
/// finishes (in completion order).
pub fn run_benchmark_with<F>(cfg: &BenchConfig, threads: usize, on_done: F) -> Result<BenchReport>
where
    F: Fn(usize, &[BenchRow]) + Sync,
{
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    let per_rep: Vec<Vec<BenchRow>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let rows = run_replication(cfg, rep)?;
                on_done(rep, &rows);
                Ok(rows)
            })
            .collect::<Result<_>>()
    })?;
    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        config_digest: cfg.digest()?,
        config: cfg.clone(),
        rows: per_rep.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// CSV text of the report: header plus one line per row, LF endings.
pub fn report_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for row in &report.rows {
        w.write_record(row.csv_record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn report_json(report: &BenchReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_report_json(s: &str) -> Result<BenchReport> {
    Ok(serde_json::from_str(s)?)
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn emit_report(report: &BenchReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_csv(report)?,
        ReportFormat::Json => report_json(report)?,
    };
    write_atomic(path, text.as_bytes())
}

/// One-line human summary per estimator: median L2 and failure count.
pub fn summary(report: &BenchReport) -> String {
    let mut out = String::new();
    for &est in &report.config.estimators {
        let failed = report
            .rows
            .iter()
            .filter(|r| r.estimator == est && r.error.is_some())
            .count();
        let med = report
            .median(est)
            .map_or_else(|| "n/a".to_string(), |m| format!("{m:.6}"));
        let _ = writeln!(out, "{est:<6} median_l2={med} failed={failed}");
    }
    out
}

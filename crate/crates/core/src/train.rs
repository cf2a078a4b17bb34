//! Adam training of the (penalized) least-squares objective with a
//! chronological early-stopping rule, and the two network estimators built
//! on it:
//!
//! * NPDNN minimises `Q_T(f) = T^{-1} Σ (Y_t - f(X_t))^2`.
//! * SPDNN minimises `Q_T(f) + λ ‖θ(f)‖_clip,τ`, with λ chosen from a
//!   five-point grid by validation MSE.
//!
//! Early stopping trains on the first half of the sample, scores the second
//! half after every epoch, and stops after `patience` epochs without
//! improvement. The best epoch count is then replayed from the same
//! initialisation on the full sample.

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::SeriesDataset;
use crate::net::{Architecture, Mlp, TruncatedEstimator};
use crate::penalty::{lambda_grid, ClippedPenalty, DEFAULT_TAU};
use crate::{Error, Regressor, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Sparse penalty; `None` trains the plain least-squares objective.
    pub penalty: Option<ClippedPenalty>,
    pub seed: u64,
    /// Multiplier on the Glorot-uniform initialisation range.
    pub init_scale: f64,
    /// Output clamp `F`; `None` means `max |Y| + 1`.
    pub clamp: Option<f64>,
    pub cube_support: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            patience: 5,
            max_epochs: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            penalty: None,
            seed: 0,
            init_scale: 1.0,
            clamp: None,
            cube_support: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::param("batch_size, patience and max_epochs must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps must be positive"));
        }
        if let Some(p) = &self.penalty {
            p.validate()?;
        }
        if let Some(f) = self.clamp {
            if !(f > 0.0) {
                return Err(Error::param(format!("clamp must be positive, got {f}")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `theta`. Non-finite gradients are
    /// rejected before anything is modified.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::dim(format!(
                "Adam state has {} entries, got theta {} and grad {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in coordinate {j}")));
        }
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = cfg.learning_rate;
        for (((t, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *t -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, grad: &[f64], cfg: &TrainConfig, theta: &mut [f64]) -> Result<()> {
    state.step(theta, grad, cfg)
}

/// `Q_T(f)`: mean squared residual.
pub fn empirical_risk<R: Regressor + ?Sized>(model: &R, data: &SeriesDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::param("empirical risk of an empty sample"));
    }
    let pred = model.predict_rows(data.x())?;
    Ok(mean_squared(&pred, data))
}

fn mean_squared(pred: &Array1<f64>, data: &SeriesDataset) -> f64 {
    pred.iter()
        .zip(data.y.iter())
        .map(|(p, y)| (y - p).powi(2))
        .sum::<f64>()
        / data.len() as f64
}

/// `Q_T(f) + λ ‖θ(f)‖_clip,τ`.
pub fn penalized_risk(net: &Mlp, data: &SeriesDataset, pen: &ClippedPenalty) -> Result<f64> {
    Ok(empirical_risk(net, data)? + pen.value(net.params()))
}

/// Patience-based stopping rule on a stream of validation scores.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    trace: Vec<f64>,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            trace: Vec::new(),
        }
    }

    /// Records the score of the next epoch; returns `false` once `patience`
    /// epochs have passed without a strict improvement.
    pub fn observe(&mut self, score: f64) -> bool {
        self.trace.push(score);
        let epoch = self.trace.len();
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
        }
        epoch - self.best_epoch < self.patience
    }

    /// 1-based epoch with the lowest score (0 before any observation).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_score(&self) -> f64 {
        self.best
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<f64> {
        self.trace
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: TruncatedEstimator,
    /// Epochs replayed on the full sample.
    pub epochs_used: usize,
    pub selected_lambda: Option<f64>,
    /// Validation MSE after each selection-phase epoch (for SPDNN, the
    /// trace of the selected λ).
    pub validation_mse_trace: Vec<f64>,
    pub final_penalized_risk: f64,
}

/// Stateful trainer: network, optimiser and minibatch RNG.
struct Trainer<'a> {
    net: Mlp,
    adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cfg: &'a TrainConfig,
    penalty: Option<ClippedPenalty>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    fn new(arch: &Architecture, n: usize, cfg: &'a TrainConfig, penalty: Option<ClippedPenalty>) -> Result<Self> {
        let net = Mlp::init(arch.clone(), cfg.init_scale, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            adam: AdamState::new(net.params().len()),
            net,
            rng,
            order: (0..n).collect(),
            cfg,
            penalty: penalty.filter(|p| p.lambda != 0.0),
            epoch: 0,
        })
    }

    fn run_epoch(&mut self, data: &SeriesDataset) -> Result<()> {
        self.epoch += 1;
        let epoch = self.epoch;
        self.order.shuffle(&mut self.rng);
        for chunk in self.order.chunks(self.cfg.batch_size) {
            let xb = data.x.select(Axis(0), chunk);
            let yb = data.y.select(Axis(0), chunk);
            let scale = 2.0 / chunk.len() as f64;
            let (_, mut grad) = self.net.value_and_grad(xb.view(), |out| (&out - &yb) * scale)?;
            if let Some(p) = &self.penalty {
                p.add_subgradient(self.net.params(), &mut grad);
            }
            self.adam
                .step(self.net.params_mut(), &grad, self.cfg)
                .map_err(|e| Error::Training {
                    epoch,
                    reason: e.to_string(),
                })?;
        }
        Ok(())
    }
}

fn resolve_clamp(cfg: &TrainConfig, data: &SeriesDataset) -> f64 {
    cfg.clamp
        .unwrap_or_else(|| data.y.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0)
}

struct Selection {
    best_epoch: usize,
    best_mse: f64,
    trace: Vec<f64>,
}

/// Trains on the first half and scores the second half each epoch.
fn select_epochs(
    data: &SeriesDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    penalty: Option<ClippedPenalty>,
    clamp: f64,
) -> Result<Selection> {
    let half = data.len() / 2;
    let (train, valid) = data.split_at(half);
    if train.is_empty() || valid.is_empty() {
        return Err(Error::param(format!(
            "early stopping needs at least 2 observations, got {}",
            data.len()
        )));
    }
    let mut trainer = Trainer::new(arch, train.len(), cfg, penalty)?;
    let mut stopper = EarlyStopper::new(cfg.patience);
    for epoch in 1..=cfg.max_epochs {
        trainer.run_epoch(&train)?;
        let est = TruncatedEstimator::new(trainer.net.clone(), clamp, cfg.cube_support)?;
        let mse = empirical_risk(&est, &valid)?;
        if !mse.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "validation MSE is not finite".into(),
            });
        }
        if !stopper.observe(mse) {
            break;
        }
    }
    Ok(Selection {
        best_epoch: stopper.best_epoch(),
        best_mse: stopper.best_score(),
        trace: stopper.into_trace(),
    })
}

/// Trains from the configured initialisation for exactly `epochs` epochs on
/// all of `data`.
pub fn train_epochs(data: &SeriesDataset, arch: &Architecture, cfg: &TrainConfig, epochs: usize) -> Result<Mlp> {
    cfg.validate()?;
    check_data(data, arch)?;
    let mut trainer = Trainer::new(arch, data.len(), cfg, cfg.penalty)?;
    for _ in 0..epochs {
        trainer.run_epoch(data)?;
    }
    Ok(trainer.net)
}

fn check_data(data: &SeriesDataset, arch: &Architecture) -> Result<()> {
    arch.validate()?;
    if data.dim() != arch.input_dim {
        return Err(Error::dim(format!(
            "data has {} lags, architecture expects {}",
            data.dim(),
            arch.input_dim
        )));
    }
    if data.is_empty() {
        return Err(Error::param("training data is empty"));
    }
    Ok(())
}

fn finish(
    data: &SeriesDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    penalty: Option<ClippedPenalty>,
    clamp: f64,
    selection: Selection,
    selected_lambda: Option<f64>,
) -> Result<FitResult> {
    let mut full_cfg = cfg.clone();
    full_cfg.penalty = penalty;
    let net = train_epochs(data, arch, &full_cfg, selection.best_epoch)?;
    let pen = penalty.unwrap_or(ClippedPenalty {
        lambda: 0.0,
        tau: DEFAULT_TAU,
    });
    let final_penalized_risk = penalized_risk(&net, data, &pen)?;
    Ok(FitResult {
        estimator: TruncatedEstimator::new(net, clamp, cfg.cube_support)?,
        epochs_used: selection.best_epoch,
        selected_lambda,
        validation_mse_trace: selection.trace,
        final_penalized_risk,
    })
}

/// Early-stopped training of the objective configured in `cfg` (plain least
/// squares, or penalized if `cfg.penalty` is set).
pub fn early_stop_train(data: &SeriesDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_data(data, arch)?;
    let clamp = resolve_clamp(cfg, data);
    let selection = select_epochs(data, arch, cfg, cfg.penalty, clamp)?;
    let lambda = cfg.penalty.map(|p| p.lambda);
    finish(data, arch, cfg, cfg.penalty, clamp, selection, lambda)
}

/// Non-penalized estimator; any penalty in `cfg` is ignored.
pub fn fit_npdnn(data: &SeriesDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<FitResult> {
    let mut cfg = cfg.clone();
    cfg.penalty = None;
    early_stop_train(data, arch, &cfg)
}

/// Sparse-penalized estimator. Each λ in `grid` (default: [`lambda_grid`]
/// of the response variance and sample size) runs the selection phase
/// with the penalized objective; the λ with the lowest plain validation MSE
/// wins, ties going to the larger λ. The clipping threshold is taken from
/// `cfg.penalty` if present, otherwise `1e-9`.
pub fn fit_spdnn(
    data: &SeriesDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    grid: Option<&[f64]>,
) -> Result<FitResult> {
    cfg.validate()?;
    check_data(data, arch)?;
    let tau = cfg.penalty.map_or(DEFAULT_TAU, |p| p.tau);
    let grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => lambda_grid(data.response_variance(), data.len())?.to_vec(),
    };
    if grid.is_empty() {
        return Err(Error::param("lambda grid is empty"));
    }
    let clamp = resolve_clamp(cfg, data);
    let mut best: Option<(f64, Selection)> = None;
    for &lambda in &grid {
        let pen = ClippedPenalty::new(lambda, tau)?;
        let sel = select_epochs(data, arch, cfg, Some(pen), clamp)?;
        let better = match &best {
            None => true,
            Some((bl, bs)) => sel.best_mse < bs.best_mse || (sel.best_mse == bs.best_mse && lambda > *bl),
        };
        if better {
            best = Some((lambda, sel));
        }
    }
    let (lambda, selection) = best.expect("grid is nonempty");
    let pen = ClippedPenalty::new(lambda, tau)?;
    finish(data, arch, cfg, Some(pen), clamp, selection, Some(lambda))
}

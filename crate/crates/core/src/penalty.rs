//! Clipped-L1 sparsity penalty `J(θ) = λ Σ_j min(|θ_j|/τ, 1)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clipping threshold used in the simulation protocol.
pub const DEFAULT_TAU: f64 = 1e-9;

/// Multipliers of `S_y (log10 T)^3 / T` forming the λ search grid.
pub const LAMBDA_GRID_MULTIPLIERS: [f64; 5] = [0.125, 0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClippedPenalty {
    pub lambda: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

impl ClippedPenalty {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        let pen = ClippedPenalty { lambda, tau };
        pen.validate()?;
        Ok(pen)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::param(format!(
                "clipping threshold tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param(format!(
                "penalty level lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// `λ ‖θ‖_clip,τ`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.lambda * clipped_sum(theta, self.tau)
    }

    /// Chosen subgradient: `λ sign(θ_j)/τ` strictly inside `(0, τ)`, zero at
    /// the kinks `0` and `τ` and in the clipped region.
    pub fn subgradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.add_subgradient(theta, &mut g);
        g
    }

    /// Adds the subgradient into `grad` in place.
    pub fn add_subgradient(&self, theta: &[f64], grad: &mut [f64]) {
        if self.lambda == 0.0 {
            return;
        }
        let slope = self.lambda / self.tau;
        for (g, &t) in grad.iter_mut().zip(theta) {
            let a = t.abs();
            if a > 0.0 && a < self.tau {
                *g += slope * t.signum();
            }
        }
    }
}

fn clipped_sum(theta: &[f64], tau: f64) -> f64 {
    theta.iter().map(|t| (t.abs() / tau).min(1.0)).sum()
}

/// `Σ_j min(|θ_j|/τ, 1)`.
pub fn clipped_norm(theta: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::param(format!(
            "clipping threshold tau must be positive, got {tau}"
        )));
    }
    Ok(clipped_sum(theta, tau))
}

pub fn penalty_value(pen: &ClippedPenalty, theta: &[f64]) -> f64 {
    pen.value(theta)
}

pub fn penalty_subgradient(pen: &ClippedPenalty, theta: &[f64]) -> Vec<f64> {
    pen.subgradient(theta)
}

/// The five candidate λ values `c S_y (log10 T)^3 / T`, ascending.
pub fn lambda_grid(sample_variance: f64, t: usize) -> Result<[f64; 5]> {
    if t < 2 {
        return Err(Error::param(format!("lambda grid needs T >= 2, got {t}")));
    }
    if !(sample_variance > 0.0) {
        return Err(Error::param(format!(
            "sample variance must be positive, got {sample_variance}"
        )));
    }
    let tf = t as f64;
    let base = sample_variance * tf.log10().powi(3) / tf;
    Ok(LAMBDA_GRID_MULTIPLIERS.map(|c| c * base))
}

/// Slowly increasing factor `ι_λ` in the theoretical penalty level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "power")]
pub enum Iota {
    /// `(ln T)^2`.
    #[default]
    LogSquared,
    /// `(ln T)^c` with `c > 1`.
    LogPower(f64),
}

impl Iota {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Iota::LogSquared => t.ln().powi(2),
            Iota::LogPower(c) => t.ln().powf(c),
        }
    }
}

/// `λ_T = F^2 ι(T) (ln T)^{2+ν_0} / T`.
pub fn theoretical_lambda(clamp: f64, t: f64, nu0: f64, iota: Iota) -> Result<f64> {
    if !(t >= 3.0) {
        return Err(Error::param(format!("theoretical lambda needs T >= 3, got {t}")));
    }
    if !(clamp >= 1.0) {
        return Err(Error::param(format!("clamp level F must be at least 1, got {clamp}")));
    }
    if let Iota::LogPower(c) = iota {
        if !(c > 1.0) {
            return Err(Error::param(format!("iota power must exceed 1, got {c}")));
        }
    }
    Ok(clamp * clamp * iota.eval(t) * t.ln().powf(2.0 + nu0) / t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_norm_examples() {
        assert_eq!(clipped_norm(&[0.0, 0.0, 0.0], 0.1).unwrap(), 0.0);
        assert_eq!(clipped_norm(&[0.5, -2.0, 0.3], 0.1).unwrap(), 3.0);
        assert!((clipped_norm(&[0.05, -0.2], 0.1).unwrap() - 1.5).abs() < 1e-15);
        assert!(clipped_norm(&[1.0], 0.0).is_err());
        assert!(clipped_norm(&[1.0], -1.0).is_err());
    }

    #[test]
    fn penalty_value_examples() {
        let theta = [0.05, -0.2];
        assert_eq!(ClippedPenalty::new(0.0, 0.1).unwrap().value(&theta), 0.0);
        assert!((ClippedPenalty::new(2.0, 0.1).unwrap().value(&theta) - 3.0).abs() < 1e-15);
        assert_eq!(ClippedPenalty::new(2.0, 0.1).unwrap().value(&[0.0; 4]), 0.0);
    }

    #[test]
    fn subgradient_examples() {
        let pen = ClippedPenalty::new(1.0, 0.1).unwrap();
        let g = pen.subgradient(&[0.05, -0.5, 0.0, -0.05, 0.1]);
        assert!((g[0] - 10.0).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
        assert!((g[3] + 10.0).abs() < 1e-12);
        assert_eq!(g[4], 0.0);
    }

    #[test]
    fn penalty_rejects_bad_parameters() {
        assert!(ClippedPenalty::new(1.0, 0.0).is_err());
        assert!(ClippedPenalty::new(-1.0, 0.1).is_err());
        assert!(ClippedPenalty::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn lambda_grid_examples() {
        // (log10 400)^3 = 17.61782...
        let l3 = 400f64.log10().powi(3);
        let g = lambda_grid(1.0, 400).unwrap();
        let hand = [
            0.005505565541460656,
            0.011011131082921313,
            0.022022262165842625,
            0.04404452433168525,
            0.0880890486633705,
        ];
        for (a, b) in g.iter().zip(hand) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((g[3] - l3 / 400.0).abs() < 1e-15);
        let g2 = lambda_grid(2.0, 400).unwrap();
        for (a, b) in g.iter().zip(g2) {
            assert_eq!(2.0 * a, b);
        }
        let g10 = lambda_grid(1.0, 10).unwrap();
        for (a, b) in g10.iter().zip([1.0 / 80.0, 1.0 / 40.0, 1.0 / 20.0, 0.1, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(lambda_grid(1.0, 1).is_err());
        assert!(lambda_grid(0.0, 10).is_err());
    }

    #[test]
    fn theoretical_lambda_values() {
        // (ln 3)^3 (ln 3)^2 / 3 with nu0 = 1 and iota = log^2.
        let hand = 0.5334589528384764;
        let v = theoretical_lambda(1.0, 3.0, 1.0, Iota::LogSquared).unwrap();
        assert!((v - hand).abs() < 1e-12);
        let v2 = theoretical_lambda(2.0, 3.0, 1.0, Iota::LogSquared).unwrap();
        assert!((v2 - 4.0 * v).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let t = 1e4 * 1.5f64.powi(k);
            let cur = theoretical_lambda(1.0, t, 1.0, Iota::LogSquared).unwrap();
            assert!(cur <= prev);
            prev = cur;
        }
        assert!(theoretical_lambda(1.0, 2.0, 1.0, Iota::LogSquared).is_err());
        assert!(theoretical_lambda(1.0, 10.0, 1.0, Iota::LogPower(1.0)).is_err());
        let lp = theoretical_lambda(1.0, 100.0, 0.5, Iota::LogPower(1.5)).unwrap();
        assert!((lp - 100f64.ln().powf(1.5) * 100f64.ln().powf(2.5) / 100.0).abs() < 1e-12);
    }
}

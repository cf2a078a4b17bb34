//! Closed-form quantities from the learning theory of sparse deep networks:
//! log-covering bounds for sparse and clipped-sparse network classes, minimax
//! rates for composition classes, sparsity budgets, the oracle-inequality
//! rate term, and an explicit relu network approximating a step function.
//!
//! All logarithms here are natural. Unknown multiplicative constants are left
//! out of every returned value.

use serde::{Deserialize, Serialize};

use crate::net::{Activation, Architecture, Mlp};
use crate::quadrature::{midpoint_1d, midpoint_2d};
use crate::{Error, Result};

/// `G(q, d, t, β, A)`: functions `g_q ∘ ... ∘ g_0` where layer `i` maps
/// `R^{d_i} → R^{d_{i+1}}` and each output coordinate is a β_i-Hölder function
/// of at most `t_i` inputs with norm at most `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionClass {
    pub q: usize,
    /// `d_0, ..., d_{q+1}` with `d_{q+1} = 1`.
    pub d_vec: Vec<usize>,
    /// `t_0, ..., t_q`.
    pub t_vec: Vec<usize>,
    /// `β_0, ..., β_q`.
    pub beta_vec: Vec<f64>,
    pub a: f64,
}

impl CompositionClass {
    pub fn new(q: usize, d_vec: Vec<usize>, t_vec: Vec<usize>, beta_vec: Vec<f64>, a: f64) -> Result<Self> {
        let cls = CompositionClass {
            q,
            d_vec,
            t_vec,
            beta_vec,
            a,
        };
        cls.validate()?;
        Ok(cls)
    }

    /// A class whose layer `i` has `d_i = t_i`, i.e. every coordinate map
    /// may depend on all of its inputs.
    pub fn dense(t_vec: Vec<usize>, beta_vec: Vec<f64>) -> Result<Self> {
        if t_vec.is_empty() {
            return Err(Error::param("composition class needs at least one layer"));
        }
        let q = t_vec.len() - 1;
        let mut d_vec = t_vec.clone();
        d_vec.push(1);
        Self::new(q, d_vec, t_vec, beta_vec, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.q + 1;
        if self.t_vec.len() != layers || self.beta_vec.len() != layers || self.d_vec.len() != layers + 1 {
            return Err(Error::dim(format!(
                "composition class with q = {} needs {} t and β entries and {} d entries",
                self.q,
                layers,
                layers + 1
            )));
        }
        if self.d_vec[layers] != 1 {
            return Err(Error::param("last entry of d_vec must be 1"));
        }
        if self.d_vec.contains(&0) || self.t_vec.contains(&0) {
            return Err(Error::param("dimensions must be positive"));
        }
        if let Some(i) = (0..layers).find(|&i| self.t_vec[i] > self.d_vec[i]) {
            return Err(Error::param(format!(
                "t_{i} = {} exceeds d_{i} = {}",
                self.t_vec[i], self.d_vec[i]
            )));
        }
        if self.beta_vec.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::param("smoothness indices must be positive and finite"));
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::param("A must be positive and finite"));
        }
        Ok(())
    }

    /// `β*_i = β_i Π_{ℓ>i} min(β_ℓ, 1)`.
    pub fn effective_smoothness(&self) -> Vec<f64> {
        let mut out = self.beta_vec.clone();
        let mut tail = 1.0;
        for i in (0..out.len()).rev() {
            out[i] *= tail;
            tail *= self.beta_vec[i].min(1.0);
        }
        out
    }
}

/// Parameters of the class of relu networks with depth `L`, width `N`,
/// at most `S` nonzero weights, all bounded by `B`, outputs clamped to `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkClassParams {
    pub s: f64,
    pub l: f64,
    pub n: f64,
    pub b: f64,
    #[serde(default = "one")]
    pub f: f64,
    #[serde(default)]
    pub tau: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl NetworkClassParams {
    pub fn new(s: f64, l: f64, n: f64, b: f64) -> Self {
        NetworkClassParams {
            s,
            l,
            n,
            b,
            f: 1.0,
            tau: None,
        }
    }

    pub fn with_clamp(mut self, f: f64) -> Self {
        self.f = f;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("S", self.s),
            ("L", self.l),
            ("N", self.n),
            ("B", self.b),
            ("F", self.f),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.b < 1.0 {
            return Err(Error::param(format!(
                "weight bound B must be at least 1, got {}",
                self.b
            )));
        }
        if let Some(t) = self.tau {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::param(format!("tau must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }

    /// `(L + 1)(N + 1)B`.
    fn spread(&self) -> f64 {
        (self.l + 1.0) * (self.n + 1.0) * self.b
    }
}

/// `2S(L+1) log((L+1)(N+1)B / δ)`, a bound on the log δ-covering number of
/// the sparse network class in sup norm.
pub fn covering_bound_sparse(p: &NetworkClassParams, delta: f64) -> Result<f64> {
    p.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!(
            "covering radius delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(2.0 * p.s * (p.l + 1.0) * (p.spread() / delta).ln())
}

/// Smallest admissible radius for the clipped class, `τ(L+1)((N+1)B)^{L+1}`.
pub fn clipped_radius_floor(p: &NetworkClassParams) -> f64 {
    let tau = p.tau.unwrap_or(0.0);
    tau * (p.l + 1.0) * ((p.n + 1.0) * p.b).powf(p.l + 1.0)
}

/// Covering bound for networks whose clipped norm is at most `S`: the sparse
/// bound with `δ` reduced by the clipping error `τ(L+1)((N+1)B)^{L+1}`.
pub fn covering_bound_clipped(p: &NetworkClassParams, delta: f64) -> Result<f64> {
    p.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!(
            "covering radius delta must lie in (0, 1), got {delta}"
        )));
    }
    let floor = clipped_radius_floor(p);
    if delta <= floor {
        return Err(Error::param(format!(
            "covering radius delta = {delta} must exceed tau (L+1) ((N+1) B)^(L+1) = {floor}"
        )));
    }
    Ok(2.0 * p.s * (p.l + 1.0) * (p.spread() / (delta - floor)).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub beta_star: Vec<f64>,
    pub phi: f64,
    pub kappa: f64,
}

/// `φ_T = max_i T^{-2β*_i / (2β*_i + t_i)}` and `κ = max_i t_i / (2β*_i)`.
pub fn phi_rate(cls: &CompositionClass, t: f64) -> Result<RateSummary> {
    cls.validate()?;
    if !(t >= 2.0 && t.is_finite()) {
        return Err(Error::param(format!("sample size T must be at least 2, got {t}")));
    }
    let beta_star = cls.effective_smoothness();
    let mut phi = 0.0f64;
    let mut kappa = 0.0f64;
    for (&b, &ti) in beta_star.iter().zip(&cls.t_vec) {
        let ti = ti as f64;
        phi = phi.max(t.powf(-2.0 * b / (2.0 * b + ti)));
        kappa = kappa.max(ti / (2.0 * b));
    }
    Ok(RateSummary { beta_star, phi, kappa })
}

/// `C_S T^{κ/(κ+1)} (log T)^r`.
pub fn sparsity_budget(kappa: f64, t: f64, r: f64, c_s: f64) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(Error::param(format!("kappa must be nonnegative, got {kappa}")));
    }
    if !(t >= 3.0) {
        return Err(Error::param(format!("sample size T must be at least 3, got {t}")));
    }
    let exponent = if kappa.is_infinite() {
        1.0
    } else {
        kappa / (kappa + 1.0)
    };
    Ok(c_s * t.powf(exponent) * t.ln().powf(r))
}

/// `F² S(L+1) log((L+1)(N+1)BT) log(T) / T`.
pub fn oracle_rate_term(p: &NetworkClassParams, t: f64) -> Result<f64> {
    p.validate()?;
    if !(t >= 3.0) {
        return Err(Error::param(format!("sample size T must be at least 3, got {t}")));
    }
    Ok(p.f * p.f * p.s * (p.l + 1.0) * (p.spread() * t).ln() * t.ln() / t)
}

/// The relu network `x ↦ σ(σ(x+1) − σ(x) − σ(−x)/ε)`, equal to 1 on
/// `[0, ∞)`, 0 below `−ε/(1+ε)`, and linear in between.
pub fn indicator_net(epsilon: f64) -> Result<Mlp> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::param(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
    }
    let arch = Architecture::new(1, vec![3, 1], Activation::Relu)?;
    #[rustfmt::skip]
    let theta = vec![
        1.0, 1.0, -1.0, // W1 (3 x 1)
        1.0, 0.0, 0.0, // b1
        1.0, -1.0, -1.0 / epsilon, // W2 (1 x 3)
        0.0, // b2
        1.0, // W3
        0.0, // b3
    ];
    Mlp::from_flat(arch, theta)
}

/// Integration region for [`l2_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Interval(f64, f64),
    Square { lo: [f64; 2], hi: [f64; 2] },
}

/// `∫ (f − g)²` over `region` by the composite midpoint rule with `nodes`
/// cells per dimension. Returns the squared distance.
pub fn l2_distance<F, G>(f: F, g: G, region: Region, nodes: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    if nodes < 2 {
        return Err(Error::param(format!("quadrature needs at least 2 nodes, got {nodes}")));
    }
    Ok(match region {
        Region::Interval(a, b) => midpoint_1d(|x| (f(&[x]) - g(&[x])).powi(2), a, b, nodes),
        Region::Square { lo, hi } => midpoint_2d(
            |x, y| {
                let p = [x, y];
                (f(&p) - g(&p)).powi(2)
            },
            lo,
            hi,
            nodes,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn sparse_bound_near_unit_radius() {
        let p = NetworkClassParams::new(2.0, 1.0, 1.0, 1.0);
        let v = covering_bound_sparse(&p, 1.0 - 1e-12).unwrap();
        assert!((v - 8.0 * 4f64.ln()).abs() < 1e-9);
        assert!(covering_bound_sparse(&p, 1.0).is_err());
        assert!(covering_bound_sparse(&p, 0.0).is_err());
    }

    #[test]
    fn clipped_bound_worked_example() {
        let p = NetworkClassParams::new(1.0, 1.0, 1.0, 1.0).with_tau(0.01);
        let v = covering_bound_clipped(&p, 0.5).unwrap();
        assert!(rel(v, 4.0 * (4.0f64 / 0.42).ln()) < 1e-12, "{v}");
        assert!(covering_bound_clipped(&p, 0.08).is_err());
        let no_tau = NetworkClassParams::new(3.0, 2.0, 5.0, 2.0).with_tau(0.0);
        assert_eq!(
            covering_bound_clipped(&no_tau, 0.3).unwrap(),
            covering_bound_sparse(&no_tau, 0.3).unwrap()
        );
    }

    #[test]
    fn rates() {
        let cls = CompositionClass::dense(vec![1], vec![2.0]).unwrap();
        let r = phi_rate(&cls, 1e5).unwrap();
        assert!(rel(r.phi, 1e-4) < 1e-14);
        assert_eq!(r.kappa, 0.25);
        let cls = CompositionClass::dense(vec![1, 1], vec![2.0, 0.5]).unwrap();
        let r = phi_rate(&cls, 400.0).unwrap();
        assert_eq!(r.beta_star, vec![1.0, 0.5]);
        assert!(rel(r.phi, 0.05) < 1e-14);
        assert_eq!(r.kappa, 1.0);
    }

    #[test]
    fn class_validation() {
        assert!(CompositionClass::new(0, vec![2, 1], vec![3], vec![1.0], 1.0).is_err());
        assert!(CompositionClass::new(0, vec![2, 2], vec![1], vec![1.0], 1.0).is_err());
        assert!(CompositionClass::new(1, vec![2, 1], vec![1], vec![1.0], 1.0).is_err());
        assert!(CompositionClass::new(0, vec![2, 1], vec![2], vec![-1.0], 1.0).is_err());
    }

    #[test]
    fn budget_and_rate_term() {
        let v = sparsity_budget(1.0, E * E, 1.0, 1.0).unwrap();
        assert!(rel(v, 2.0 * E) < 1e-14);
        assert_eq!(
            sparsity_budget(0.0, 100.0, 2.0, 3.0).unwrap(),
            3.0 * 100f64.ln().powi(2)
        );
        let p = NetworkClassParams::new(1.0, 1.0, 1.0, 1.0);
        let t = E.powi(3);
        let v = oracle_rate_term(&p, t).unwrap();
        let direct = 2.0 * (4.0 * t).ln() * t.ln() / t;
        assert!(rel(v, direct) < 1e-14);
        assert!(rel(v, 6.0 * (4f64.ln() + 3.0) / t) < 1e-12);
        let doubled = oracle_rate_term(&p.with_clamp(2.0), t).unwrap();
        assert!(rel(doubled, 4.0 * v) < 1e-14);
    }

    #[test]
    fn indicator_values() {
        let net = indicator_net(0.1).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), 1.0);
        assert_eq!(net.forward(&[-1.0]).unwrap(), 0.0);
        assert_eq!(net.forward(&[0.0]).unwrap(), 1.0);
        assert!((net.forward(&[-0.05]).unwrap() - (1.0 - 0.05 * 11.0)).abs() < 1e-12);
        assert!(indicator_net(0.5).is_err());
        assert!(indicator_net(0.0).is_err());
    }

    #[test]
    fn quadrature_distance() {
        let d = l2_distance(|x| x[0], |x| x[0] - 0.3, Region::Interval(0.0, 1.0), 10).unwrap();
        assert!((d - 0.09).abs() < 1e-14);
        let d = l2_distance(
            |x| x[0] * x[1],
            |_| 0.0,
            Region::Square {
                lo: [0.0; 2],
                hi: [1.0; 2],
            },
            400,
        )
        .unwrap();
        assert!((d - 1.0 / 9.0).abs() < 1e-5);
        assert!(l2_distance(|_| 0.0, |_| 0.0, Region::Interval(0.0, 1.0), 1).is_err());
    }
}

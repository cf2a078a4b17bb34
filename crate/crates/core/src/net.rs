//! Feedforward networks `x -> A_{L+1} ∘ σ ∘ A_L ∘ ... ∘ σ ∘ A_1 x` with a
//! scalar output.
//!
//! A network owns a single flat parameter vector laid out as
//! `vec(W_1), b_1, vec(W_2), b_2, ..., vec(W_{L+1}), b_{L+1}` where `vec` is
//! column-major vectorisation and `W_l` has shape `p_l x p_{l-1}`. Layer
//! matrices are borrowed views into that vector, so flattening is a copy and
//! training updates the vector in place.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative at pre-activation `z`; the ReLU subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }

    /// Lipschitz constant of the activation.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Relu => 1.0,
            Activation::Sigmoid => 0.25,
        }
    }
}

/// Network shape `(L, p)`: input dimension `p_0 = d`, hidden widths
/// `p_1..p_L`, scalar output `p_{L+1} = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            widths,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `depth` hidden layers of equal `width`.
    pub fn uniform(input_dim: usize, depth: usize, width: usize, activation: Activation) -> Result<Self> {
        Self::new(input_dim, vec![width; depth], activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::dim("input dimension must be at least 1"));
        }
        if self.widths.is_empty() {
            return Err(Error::dim("at least one hidden layer is required"));
        }
        if let Some(l) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::dim(format!("hidden layer {} has width 0", l + 1)));
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// `(rows, cols)` of every weight matrix `W_1..W_{L+1}`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.widths.iter().chain(std::iter::once(&1)) {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes
    }

    /// `Σ_l (p_{l-1} p_l + p_l)`.
    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|&(o, i)| o * i + o).sum()
    }

    /// Largest hidden width `N`.
    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    theta: Vec<f64>,
    offsets: Vec<usize>,
}

/// Intermediate values of a batched forward pass, kept for backprop.
struct ForwardCache {
    /// Inputs to every layer (`a_0 = X`, `a_l = σ(z_l)`).
    activations: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl Mlp {
    /// Rebuilds a network from its flat parameter vector.
    pub fn from_flat(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.n_params();
        if theta.len() != expected {
            return Err(Error::dim(format!(
                "parameter vector has length {}, architecture needs {expected}",
                theta.len()
            )));
        }
        let mut offsets = Vec::with_capacity(arch.depth() + 1);
        let mut off = 0;
        for (o, i) in arch.layer_shapes() {
            offsets.push(off);
            off += o * i + o;
        }
        Ok(Mlp { arch, theta, offsets })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.n_params();
        Self::from_flat(arch, vec![0.0; n])
    }

    /// Glorot-uniform weights scaled by `scale`, zero biases.
    pub fn init(arch: Architecture, scale: f64, seed: u64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::param(format!(
                "init scale must be finite and nonnegative, got {scale}"
            )));
        }
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, (o, i)) in net.arch.layer_shapes().into_iter().enumerate() {
            let limit = scale * (6.0 / (o + i) as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.theta[off..off + o * i] {
                let u: f64 = rng.random();
                *w = limit * (2.0 * u - 1.0);
            }
        }
        Ok(net)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// θ(f) in the documented order.
    pub fn flatten_params(&self) -> Vec<f64> {
        self.theta.clone()
    }

    pub fn into_params(self) -> Vec<f64> {
        self.theta
    }

    /// Weight matrix and bias of layer `l` (0-based, `l = L` is the output layer).
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (o, i) = self.arch.layer_shapes()[l];
        let off = self.offsets[l];
        let w = ArrayView2::from_shape((o, i).f(), &self.theta[off..off + o * i]).expect("layer shape");
        let b = ArrayView1::from(&self.theta[off + o * i..off + o * i + o]);
        (w, b)
    }

    fn n_layers(&self) -> usize {
        self.offsets.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arch.input_dim {
            return Err(Error::dim(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let mut h = Array1::from(x.to_vec());
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let mut z = w.dot(&h) + b;
            if l < last {
                let act = self.arch.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h[0])
    }

    /// Evaluates every row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_batch(x)?;
        let act = self.arch.activation;
        let last = self.n_layers() - 1;
        let mut h: Array2<f64> = x.to_owned();
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            z += &b;
            if l < last {
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h.column(0).to_owned())
    }

    fn check_batch(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::dim(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        let act = self.arch.activation;
        let last = self.n_layers() - 1;
        let mut activations = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last);
        activations.push(x.to_owned());
        let mut output = Array1::zeros(x.nrows());
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let mut z = activations[l].dot(&w.t());
            z += &b;
            if l < last {
                let a = z.mapv(|v| act.apply(v));
                pre.push(z);
                activations.push(a);
            } else {
                output = z.column(0).to_owned();
            }
        }
        ForwardCache {
            activations,
            pre,
            output,
        }
    }

    /// Gradient of `Σ_i loss_i` with respect to θ, given `residual_grads[i] =
    /// ∂loss_i/∂f(x_i)`. The result follows the flat parameter order.
    pub fn backprop(&self, inputs: ArrayView2<'_, f64>, residual_grads: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check_batch(inputs)?;
        if residual_grads.len() != inputs.nrows() {
            return Err(Error::dim(format!(
                "{} residual gradients for {} samples",
                residual_grads.len(),
                inputs.nrows()
            )));
        }
        let cache = self.forward_cached(inputs);
        Ok(self.backward(&cache, residual_grads))
    }

    /// One forward and backward pass. `loss_grad` maps the batch outputs to
    /// per-sample output derivatives; returns the outputs and θ-gradient.
    pub fn value_and_grad<F>(&self, inputs: ArrayView2<'_, f64>, loss_grad: F) -> Result<(Array1<f64>, Vec<f64>)>
    where
        F: FnOnce(ArrayView1<'_, f64>) -> Array1<f64>,
    {
        self.check_batch(inputs)?;
        let cache = self.forward_cached(inputs);
        let r = loss_grad(cache.output.view());
        if r.len() != inputs.nrows() {
            return Err(Error::dim("loss gradient length differs from batch size"));
        }
        let grad = self.backward(&cache, r.view());
        Ok((cache.output, grad))
    }

    fn backward(&self, cache: &ForwardCache, residual_grads: ArrayView1<'_, f64>) -> Vec<f64> {
        let act = self.arch.activation;
        let shapes = self.arch.layer_shapes();
        let mut grad = vec![0.0; self.theta.len()];
        let mut delta: Array2<f64> = residual_grads.to_owned().insert_axis(Axis(1));
        for l in (0..self.n_layers()).rev() {
            let (o, i) = shapes[l];
            let off = self.offsets[l];
            {
                let (gw, gb) = grad[off..off + o * i + o].split_at_mut(o * i);
                let mut gw = ArrayViewMut2::from_shape((o, i).f(), gw).expect("layer shape");
                general_mat_mul(1.0, &delta.t(), &cache.activations[l], 0.0, &mut gw);
                for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                    *g = *s;
                }
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut next = delta.dot(&w);
                next.zip_mut_with(&cache.pre[l - 1], |d, &z| *d *= act.derivative(z));
                delta = next;
            }
        }
        grad
    }

    /// Product of per-layer Frobenius norms and activation Lipschitz constants;
    /// an upper bound on the network's Lipschitz constant.
    pub fn lipschitz_bound(&self) -> f64 {
        let hidden = self.arch.activation.lipschitz().powi(self.arch.depth() as i32);
        (0..self.n_layers())
            .map(|l| {
                let (w, _) = self.layer(l);
                w.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .product::<f64>()
            * hidden
    }

    /// `|θ|_∞`, audited against the weight bound `B` of the estimator class.
    pub fn max_abs_param(&self) -> f64 {
        self.theta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetworkDocument = serde_json::from_str(s)?;
        doc.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a network:
///
/// ```json
/// { "input_dim": 2, "widths": [128, 128, 128], "activation": "relu", "theta": [...] }
/// ```
///
/// `theta` is in `flatten_params` order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub theta: Vec<f64>,
}

impl From<&Mlp> for NetworkDocument {
    fn from(net: &Mlp) -> Self {
        NetworkDocument {
            input_dim: net.arch.input_dim,
            widths: net.arch.widths.clone(),
            activation: net.arch.activation,
            theta: net.theta.clone(),
        }
    }
}

impl TryFrom<NetworkDocument> for Mlp {
    type Error = Error;

    fn try_from(doc: NetworkDocument) -> Result<Self> {
        let arch = Architecture::new(doc.input_dim, doc.widths, doc.activation)?;
        Mlp::from_flat(arch, doc.theta)
    }
}

/// A network clamped to `[-F, F]` and optionally supported on the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedEstimator {
    pub net: Mlp,
    pub clamp: f64,
    pub cube_support: bool,
}

impl TruncatedEstimator {
    pub fn new(net: Mlp, clamp: f64, cube_support: bool) -> Result<Self> {
        if !(clamp > 0.0) {
            return Err(Error::param(format!("clamp level must be positive, got {clamp}")));
        }
        Ok(TruncatedEstimator {
            net,
            clamp,
            cube_support,
        })
    }

    fn in_cube(x: &[f64]) -> bool {
        x.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let raw = self.net.forward(x)?;
        if self.cube_support && !Self::in_cube(x) {
            return Ok(0.0);
        }
        Ok(raw.clamp(-self.clamp, self.clamp))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let mut out = self.net.forward_batch(x)?;
        for (v, row) in out.iter_mut().zip(x.rows()) {
            *v = if self.cube_support && !row.iter().all(|r| (0.0..=1.0).contains(r)) {
                0.0
            } else {
                v.clamp(-self.clamp, self.clamp)
            };
        }
        Ok(out)
    }
}

/// Number of entries with `|θ_j| > tol`.
pub fn count_nonzero(theta: &[f64], tol: f64) -> usize {
    theta.iter().filter(|v| v.abs() > tol).count()
}

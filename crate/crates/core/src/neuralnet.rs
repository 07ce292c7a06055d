//! Dense feed-forward networks with hand-written backpropagation, the two
//! losses the imputation GAN needs, and Adam.
//!
//! Activations are row-major batches: one sample per row.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const SMOOTH_L1_BETA: f64 = 1.0;
pub const BCE_CLAMP: f64 = 1e-7;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, z: F) -> F {
        match self {
            Activation::LeakyRelu => {
                if z > F::zero() {
                    z
                } else {
                    z * F::of(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => F::one() / (F::one() + (-z).exp()),
            Activation::None => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    #[inline]
    fn derivative<F: Real>(self, z: F, a: F) -> F {
        match self {
            Activation::LeakyRelu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::of(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => a * (F::one() - a),
            Activation::None => F::one(),
        }
    }
}

/// Fully connected layer `a = act(W x + b)` with `W` shaped (out, in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Real> Layer<F> {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetParams<F> {
    pub layers: Vec<Layer<F>>,
    pub init_seed: u64,
    /// Bumped on every parameter update; caches record it.
    #[serde(skip)]
    version: u64,
}

impl<F: Real> PartialEq for NetParams<F> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.init_seed == other.init_seed
    }
}

impl<F: Real> NetParams<F> {
    /// Glorot-uniform weights, zero biases. `widths` lists every layer width
    /// including input and output; `activations` has one entry per layer.
    pub fn new(widths: &[usize], activations: &[Activation], init_seed: u64) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::Argument(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        let mut rng = seed::rng(init_seed);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, act)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| F::of(rng.random_range(-limit..limit)));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: *act,
                }
            })
            .collect();
        Ok(NetParams {
            layers,
            init_seed,
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Argument("layer dimensions do not chain".into()));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(Error::Argument("bias length does not match layer output".into()));
        }
        if layers.is_empty() {
            return Err(Error::Argument("network has no layers".into()));
        }
        Ok(NetParams {
            layers,
            init_seed: 0,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs()));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to the layers; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Argument(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            let out = z.mapv(|v| layer.activation.apply(v));
            inputs.push(std::mem::replace(&mut a, out));
            pre.push(z);
        }
        let cache = ForwardCache {
            inputs,
            pre,
            output: a.clone(),
            version: self.version,
            widths: self.widths(),
        };
        Ok((a, cache))
    }

    /// Forward pass for a single sample.
    pub fn forward(&self, x: &[F]) -> Result<(Vec<F>, ForwardCache<F>)> {
        let xb = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Argument(e.to_string()))?;
        let (out, cache) = self.forward_batch(xb)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        Ok(self.forward_batch(x)?.0)
    }

    /// Exact gradients of a loss with respect to every parameter and to the
    /// network input, given `d_out = dLoss/dOutput` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache<F>, d_out: ArrayView2<'_, F>) -> Result<(Gradients<F>, Array2<F>)> {
        if cache.version != self.version || cache.widths != self.widths() {
            return Err(Error::Contract("forward cache does not belong to the current parameters".into()));
        }
        if d_out.dim() != cache.output.dim() {
            return Err(Error::Argument(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                d_out.dim(),
                cache.output.dim()
            )));
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = d_out.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let out = if l + 1 < n { &cache.inputs[l + 1] } else { &cache.output };
            Zip::from(&mut delta)
                .and(&cache.pre[l])
                .and(out)
                .for_each(|d, &z, &a| *d *= layer.activation.derivative(z, a));
            let d_w = delta.t().dot(&cache.inputs[l]);
            let d_b = delta.sum_axis(Axis(0));
            let d_in = delta.dot(&layer.weights);
            grads.push(LayerGrad { weights: d_w, bias: d_b });
            delta = d_in;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataio::write_json(
            path,
            &Checkpoint {
                format_version: CHECKPOINT_VERSION,
                net: self.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint<F> = crate::dataio::read_json(path)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {}", ck.format_version)));
        }
        let mut net = NetParams::from_layers(ck.net.layers)?;
        net.init_seed = ck.net.init_seed;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Real")]
struct Checkpoint<F> {
    format_version: u32,
    net: NetParams<F>,
}

/// Everything backpropagation needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
    output: Array2<F>,
    version: u64,
    widths: Vec<usize>,
}

impl<F: Real> ForwardCache<F> {
    pub fn output(&self) -> &Array2<F> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGrad<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(net: &NetParams<F>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.layers {
            g.weights.mapv_inplace(|v| v * s);
            g.bias.mapv_inplace(|v| v * s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|v| *v == F::zero()))
    }
}

/// Smooth L1 (Huber with beta = 1) averaged over the selected elements.
/// Returns the loss and its gradient with respect to `pred`.
pub fn smooth_l1_batch<F: Real>(pred: ArrayView2<'_, F>, target: ArrayView2<'_, F>, select: ArrayView2<'_, bool>) -> Result<(F, Array2<F>)> {
    if pred.dim() != target.dim() || pred.dim() != select.dim() {
        return Err(Error::Argument("smooth L1 inputs differ in shape".into()));
    }
    let count = select.iter().filter(|s| **s).count();
    if count == 0 {
        return Err(Error::Loss("smooth L1 over an empty selection".into()));
    }
    let beta = F::of(SMOOTH_L1_BETA);
    let half = F::of(0.5);
    let inv = F::one() / F::of_usize(count);
    let mut loss = F::zero();
    let mut grad = Array2::zeros(pred.dim());
    Zip::from(&mut grad)
        .and(pred)
        .and(target)
        .and(select)
        .for_each(|g, &p, &t, &s| {
            if s {
                let d = p - t;
                if d.abs() < beta {
                    loss += half * d * d / beta;
                    *g = d / beta * inv;
                } else {
                    loss += d.abs() - half * beta;
                    *g = d.signum() * inv;
                }
            }
        });
    Ok((loss * inv, grad))
}

pub fn smooth_l1<F: Real>(pred: &[F], target: &[F], select: &[bool]) -> Result<(F, Vec<F>)> {
    let n = pred.len();
    if target.len() != n || select.len() != n {
        return Err(Error::Argument("smooth L1 inputs differ in length".into()));
    }
    let row = |v| ArrayView2::from_shape((1, n), v).expect("one row");
    let sel = ArrayView2::from_shape((1, n), select).expect("one row");
    let (l, g) = smooth_l1_batch(row(pred), row(target), sel)?;
    Ok((l, g.into_raw_vec_and_offset().0))
}

/// Mean binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7].
pub fn bce_batch<F: Real>(prob: ArrayView2<'_, F>, label: ArrayView2<'_, F>) -> Result<(F, Array2<F>)> {
    if prob.dim() != label.dim() {
        return Err(Error::Argument("bce inputs differ in shape".into()));
    }
    if prob.is_empty() {
        return Err(Error::Loss("bce over an empty batch".into()));
    }
    let lo = F::of(BCE_CLAMP);
    let hi = F::one() - lo;
    let inv = F::one() / F::of_usize(prob.len());
    let mut loss = F::zero();
    let mut grad = Array2::zeros(prob.dim());
    Zip::from(&mut grad).and(prob).and(label).for_each(|g, &p, &y| {
        let p = p.max(lo).min(hi);
        loss -= y * p.ln() + (F::one() - y) * (F::one() - p).ln();
        *g = (p - y) / (p * (F::one() - p)) * inv;
    });
    Ok((loss * inv, grad))
}

pub fn bce<F: Real>(prob: &[F], label: &[F]) -> Result<(F, Vec<F>)> {
    let n = prob.len();
    if label.len() != n {
        return Err(Error::Argument("bce inputs differ in length".into()));
    }
    let p = ArrayView2::from_shape((1, n), prob).map_err(|e| Error::Argument(e.to_string()))?;
    let y = ArrayView2::from_shape((1, n), label).expect("same length");
    let (l, g) = bce_batch(p, y)?;
    Ok((l, g.into_raw_vec_and_offset().0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Gradients<F>,
    pub v: Gradients<F>,
    pub t: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> AdamState<F> {
    pub fn new(net: &NetParams<F>, lr: f64) -> Self {
        AdamState {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            lr: F::of(lr),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<F: Real>(net: &mut NetParams<F>, grads: &Gradients<F>, state: &mut AdamState<F>) -> Result<()> {
    let shapes_match = |g: &Gradients<F>| {
        g.layers.len() == net.layers.len()
            && g.layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
    };
    if !shapes_match(grads) || !shapes_match(&state.m) || !shapes_match(&state.v) {
        return Err(Error::Argument("gradient shapes do not match the network".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = F::one() - b1.powi(t);
    let c2 = F::one() - b2.powi(t);
    let lr = state.lr;
    let update = |p: &mut F, g: &F, m: &mut F, v: &mut F| {
        *m = b1 * *m + (F::one() - b1) * *g;
        *v = b2 * *v + (F::one() - b2) * *g * *g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        let (g, m, v) = (&grads.layers[l], &mut state.m.layers[l], &mut state.v.layers[l]);
        Zip::from(&mut layer.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
    }
    Ok(())
}

//! Fully connected networks with exact reverse-mode gradients and Adam.
//!
//! Parameters live in one flat [`ParamVector`]. Layer `l` stores its weight matrix
//! row-major as `(out, in)` followed by its `out` biases, layers in order. Hidden
//! layers apply the activation; the output layer is affine.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    #[default]
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize, activation: Activation) -> Self {
        Self { input_dim, hidden_dims: hidden_dims.to_vec(), output_dim, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParams(format!("all layer widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Offsets of each layer's weights and biases in the flat vector.
    fn offsets(&self) -> Vec<LayerOffsets> {
        let mut off = 0;
        self.layers()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let w = off;
                let b = w + fan_in * fan_out;
                off = b + fan_out;
                LayerOffsets { fan_in, fan_out, w, b }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerOffsets {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn check(&self, spec: &MlpSpec) -> Result<()> {
        let n = spec.num_params();
        if self.0.len() != n {
            return Err(Error::DimMismatch { expected: n, actual: self.0.len() });
        }
        Ok(())
    }
}

/// Fan-in scaled Gaussian weights (variance `1 / fan_in`), zero biases.
pub fn init(spec: &MlpSpec, seed: u64) -> Result<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with_rng(spec, &mut rng, 1.0)
}

/// As [`init`], with the output layer's weights multiplied by `output_gain`.
pub fn init_with_rng<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R, output_gain: f64) -> Result<ParamVector> {
    spec.validate()?;
    let mut p = ParamVector::zeros(spec.num_params());
    let offsets = spec.offsets();
    let last = offsets.len() - 1;
    for (l, lo) in offsets.iter().enumerate() {
        let std = (1.0 / lo.fan_in as f64).sqrt() * if l == last { output_gain } else { 1.0 };
        for w in &mut p.0[lo.w..lo.b] {
            let z: f64 = rng.sample(StandardNormal);
            *w = std * z;
        }
    }
    Ok(p)
}

fn weights<'a>(params: &'a [f64], lo: &LayerOffsets) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((lo.fan_out, lo.fan_in), &params[lo.w..lo.b]).expect("layout")
}

fn biases<'a>(params: &'a [f64], lo: &LayerOffsets) -> ArrayView1<'a, f64> {
    ArrayView1::from(&params[lo.b..lo.b + lo.fan_out])
}

/// Activations retained by [`forward_batch`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.post.last().expect("at least one layer").view()
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// Forward pass over a batch of row vectors.
pub fn forward_batch(params: &ParamVector, spec: &MlpSpec, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
    params.check(spec)?;
    if input.ncols() != spec.input_dim {
        return Err(Error::DimMismatch { expected: spec.input_dim, actual: input.ncols() });
    }
    let offsets = spec.offsets();
    let last = offsets.len() - 1;
    let mut pre = Vec::with_capacity(offsets.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(offsets.len());
    for (l, lo) in offsets.iter().enumerate() {
        let x = if l == 0 { input.view() } else { post[l - 1].view() };
        let mut z = x.dot(&weights(&params.0, lo).t());
        z += &biases(&params.0, lo);
        let a = if l == last { z.clone() } else { z.mapv(|v| spec.activation.apply(v)) };
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardCache { input: input.to_owned(), pre, post })
}

/// Reverse pass: accumulates `∂⟨output, cotangent⟩/∂params` into `grad` and returns
/// the gradient with respect to the batch input.
pub fn backward_batch(
    params: &ParamVector,
    spec: &MlpSpec,
    cache: &ForwardCache,
    cotangent: ArrayView2<'_, f64>,
    grad: &mut ParamVector,
) -> Result<Array2<f64>> {
    params.check(spec)?;
    grad.check(spec)?;
    let out = cache.output();
    if cotangent.dim() != out.dim() {
        return Err(Error::DimMismatch { expected: out.ncols(), actual: cotangent.ncols() });
    }
    let offsets = spec.offsets();
    let last = offsets.len() - 1;
    let mut delta = cotangent.to_owned();
    for l in (0..offsets.len()).rev() {
        let lo = &offsets[l];
        if l != last {
            let act = spec.activation;
            ndarray::Zip::from(&mut delta)
                .and(&cache.pre[l])
                .and(&cache.post[l])
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
        }
        let x = if l == 0 { cache.input.view() } else { cache.post[l - 1].view() };
        {
            let (head, tail) = grad.0.split_at_mut(lo.b);
            let mut gw = ArrayViewMut2::from_shape((lo.fan_out, lo.fan_in), &mut head[lo.w..]).expect("layout");
            general_mat_mul(1.0, &delta.t(), &x, 1.0, &mut gw);
            let gb = delta.sum_axis(Axis(0));
            for (g, d) in tail[..lo.fan_out].iter_mut().zip(gb.iter()) {
                *g += d;
            }
        }
        delta = delta.dot(&weights(&params.0, lo));
    }
    Ok(delta)
}

pub fn forward(params: &ParamVector, spec: &MlpSpec, input: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
    let cache = forward_batch(params, spec, x)?;
    Ok(cache.output().row(0).to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: ParamVector,
    pub input: Vec<f64>,
}

/// Gradient of `⟨forward(input), cotangent⟩` with respect to parameters and input.
pub fn backward(params: &ParamVector, spec: &MlpSpec, input: &[f64], cotangent: &[f64]) -> Result<Gradients> {
    if cotangent.len() != spec.output_dim {
        return Err(Error::DimMismatch { expected: spec.output_dim, actual: cotangent.len() });
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
    let cache = forward_batch(params, spec, x)?;
    let ct = ArrayView2::from_shape((1, cotangent.len()), cotangent).expect("row");
    let mut g = ParamVector::zeros(spec.num_params());
    let dx = backward_batch(params, spec, &cache, ct, &mut g)?;
    Ok(Gradients { params: g, input: dx.row(0).to_vec() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    #[serde(default)]
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, config: AdamConfig::default() }
    }
}

/// One bias-corrected Adam step. A non-finite gradient leaves everything untouched.
pub fn adam_update(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::LengthMismatch { expected: params.len(), actual: grad.len() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::RejectUpdate);
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Scales `grad` in place so its Euclidean norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Dense row-major batch helper.
pub fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let mut a = Array2::zeros((rows.len(), width));
    for (mut dst, src) in a.outer_iter_mut().zip(rows) {
        dst.assign(&Array1::from(src.clone()));
    }
    a
}

//! Constraint-conditioned policy and critics.
//!
//! The actor is a diagonal Gaussian whose mean is an MLP over the observation with
//! the constraint level appended. Critics come in two flavours:
//!
//! - **decomposed** (the [`ConditioningMode::Cncp`] critic): a state feature network
//!   `ξ(s) ∈ ℝᵈ` and a constraint weight network `w(ε) ∈ ℝᵈ`, with
//!   `V(s, ε) = ξ(s)ᵀ w(ε)`;
//! - **plain**: a scalar MLP over the conditioned input, used by the concatenation
//!   baselines and by unconditioned oracles.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, ForwardCache, MlpSpec, ParamVector};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConstraintLevel(f64);

impl ConstraintLevel {
    pub fn new(epsilon: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&epsilon) {
            Ok(Self(epsilon))
        } else {
            Err(Error::InvalidParams(format!("constraint level {epsilon} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ConstraintLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConstraintLevel> for f64 {
    fn from(c: ConstraintLevel) -> f64 {
        c.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Decomposed critics; the actor sees ε appended once.
    Cncp,
    /// ε appended once to actor and critic inputs.
    Conc,
    /// ε repeated `repeat` times before concatenation.
    Rc { repeat: usize },
    /// ε is not observed at all.
    Unconditioned,
}

impl ConditioningMode {
    pub const RC_DEFAULT_REPEAT: usize = 10;

    pub fn rc() -> Self {
        Self::Rc { repeat: Self::RC_DEFAULT_REPEAT }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Rc { repeat: 0 } => Err(Error::InvalidParams("rc repeat count must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Cncp => "cncp",
            Self::Conc => "conc",
            Self::Rc { .. } => "rc",
            Self::Unconditioned => "unconditioned",
        }
    }

    pub fn eps_copies(&self) -> usize {
        match self {
            Self::Cncp | Self::Conc => 1,
            Self::Rc { repeat } => *repeat,
            Self::Unconditioned => 0,
        }
    }

    pub fn input_dim(&self, obs_dim: usize) -> usize {
        obs_dim + self.eps_copies()
    }

    pub fn is_decomposed(&self) -> bool {
        matches!(self, Self::Cncp)
    }
}

pub fn condition_input(obs: &Observation, eps: ConstraintLevel, mode: ConditioningMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(mode.input_dim(OBS_DIM));
    write_conditioned(obs, eps.value(), mode, &mut out);
    out
}

pub(crate) fn write_conditioned(obs: &Observation, eps: f64, mode: ConditioningMode, out: &mut Vec<f64>) {
    obs.write_into(out);
    out.extend(std::iter::repeat_n(eps, mode.eps_copies()));
}

/// Row-stacks conditioned inputs.
pub fn conditioned_batch(obs: &[Observation], eps: &[f64], mode: ConditioningMode) -> Array2<f64> {
    let width = mode.input_dim(OBS_DIM);
    let mut flat = Vec::with_capacity(obs.len() * width);
    for (o, e) in obs.iter().zip(eps) {
        write_conditioned(o, *e, mode, &mut flat);
    }
    Array2::from_shape_vec((obs.len(), width), flat).expect("rows")
}

/// Network widths shared by actor and critics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentDims {
    pub hidden: Vec<usize>,
    /// Width `d` of the decomposed critic's feature and weight vectors.
    pub feature_dim: usize,
    pub activation: Activation,
    pub init_log_std: f64,
}

impl Default for AgentDims {
    fn default() -> Self {
        Self { hidden: vec![64, 64], feature_dim: 16, activation: Activation::Elu, init_log_std: -0.5 }
    }
}

impl AgentDims {
    pub fn full_scale() -> Self {
        Self { hidden: vec![512, 256, 128], feature_dim: 64, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl Net {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R, output_gain: f64) -> Result<Self> {
        let params = nn::init_with_rng(&spec, rng, output_gain)?;
        Ok(Self { spec, params })
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        nn::forward_batch(&self.params, &self.spec, x)
    }

    pub fn backward(&self, cache: &ForwardCache, cotangent: ArrayView2<'_, f64>, grad: &mut ParamVector) -> Result<Array2<f64>> {
        nn::backward_batch(&self.params, &self.spec, cache, cotangent, grad)
    }

    pub fn zero_grad(&self) -> ParamVector {
        ParamVector::zeros(self.params.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub mean_net: Net,
    pub log_std: [f64; ACTION_DIM],
}

impl PolicyParams {
    pub fn init<R: Rng + ?Sized>(mode: ConditioningMode, dims: &AgentDims, rng: &mut R) -> Result<Self> {
        mode.validate()?;
        let spec = MlpSpec::new(mode.input_dim(OBS_DIM), &dims.hidden, ACTION_DIM, dims.activation);
        let init_log_std = dims.init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        Ok(Self { mean_net: Net::new(spec, rng, 0.01)?, log_std: [init_log_std; ACTION_DIM] })
    }

    pub fn clamped_log_std(&self) -> [f64; ACTION_DIM] {
        self.log_std.map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn mean(&self, input: &[f64]) -> Result<[f64; ACTION_DIM]> {
        let y = nn::forward(&self.mean_net.params, &self.mean_net.spec, input)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::PolicyDivergence(format!("non-finite action mean {y:?}")));
        }
        Ok([y[0], y[1]])
    }

    pub fn is_finite(&self) -> bool {
        self.mean_net.params.is_finite() && self.log_std.iter().all(|x| x.is_finite())
    }
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), ls)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

/// A sampled action before and after clamping, with the pre-clamp log-density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub raw: [f64; ACTION_DIM],
    pub action: Action,
    pub log_prob: f64,
}

pub fn sample_from_mean<R: Rng + ?Sized>(mean: [f64; ACTION_DIM], log_std: [f64; ACTION_DIM], rng: &mut R) -> Sample {
    let mut raw = [0.0; ACTION_DIM];
    for j in 0..ACTION_DIM {
        let z: f64 = rng.sample(StandardNormal);
        raw[j] = mean[j] + log_std[j].exp() * z;
    }
    let log_prob = gaussian_log_prob(&raw, &mean, &log_std);
    Sample { raw, action: Action::new(raw[0], raw[1]).clamped(), log_prob }
}

/// Stochastic action for `(obs, ε)` and its pre-clamp log-probability.
pub fn act<R: Rng + ?Sized>(
    obs: &Observation,
    eps: ConstraintLevel,
    policy: &PolicyParams,
    mode: ConditioningMode,
    rng: &mut R,
) -> Result<(Action, f64)> {
    let mean = policy.mean(&condition_input(obs, eps, mode))?;
    let s = sample_from_mean(mean, policy.clamped_log_std(), rng);
    Ok((s.action, s.log_prob))
}

/// Deterministic evaluation action (the clamped mean).
pub fn act_deterministic(obs: &Observation, eps: ConstraintLevel, policy: &PolicyParams, mode: ConditioningMode) -> Result<Action> {
    let m = policy.mean(&condition_input(obs, eps, mode))?;
    Ok(Action::new(m[0], m[1]).clamped())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Reward,
    Cost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueNet {
    /// `V(s, ε) = ξ(s)ᵀ w(ε)`.
    Decomposed { features: Net, weights: Net },
    Plain { net: Net },
}

pub enum ValueCache {
    Decomposed { features: ForwardCache, weights: ForwardCache, index: Vec<usize> },
    Plain { net: ForwardCache },
}

impl ValueNet {
    pub fn nets(&self) -> Vec<&Net> {
        match self {
            Self::Decomposed { features, weights } => vec![features, weights],
            Self::Plain { net } => vec![net],
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Net> {
        match self {
            Self::Decomposed { features, weights } => vec![features, weights],
            Self::Plain { net } => vec![net],
        }
    }

    pub fn zero_grads(&self) -> Vec<ParamVector> {
        self.nets().iter().map(|n| n.zero_grad()).collect()
    }

    /// Values for a batch of observations paired with constraint levels.
    pub fn forward(&self, mode: ConditioningMode, obs: &[Observation], eps: &[f64]) -> Result<(Vec<f64>, ValueCache)> {
        if obs.len() != eps.len() {
            return Err(Error::LengthMismatch { expected: obs.len(), actual: eps.len() });
        }
        match self {
            Self::Decomposed { features, weights } => {
                let states = conditioned_batch(obs, eps, ConditioningMode::Unconditioned);
                let fc = features.forward_batch(states.view())?;
                // w(ε) only depends on ε, so evaluate it once per distinct level
                let mut uniq: Vec<f64> = Vec::new();
                let index: Vec<usize> = eps
                    .iter()
                    .map(|e| match uniq.iter().position(|u| u.to_bits() == e.to_bits()) {
                        Some(i) => i,
                        None => {
                            uniq.push(*e);
                            uniq.len() - 1
                        }
                    })
                    .collect();
                let levels = Array2::from_shape_vec((uniq.len(), 1), uniq).expect("column");
                let wc = weights.forward_batch(levels.view())?;
                let xi = fc.output();
                let w = wc.output();
                if xi.ncols() != w.ncols() {
                    return Err(Error::DimMismatch { expected: xi.ncols(), actual: w.ncols() });
                }
                let values = index.iter().enumerate().map(|(b, &u)| xi.row(b).dot(&w.row(u))).collect();
                Ok((values, ValueCache::Decomposed { features: fc, weights: wc, index }))
            }
            Self::Plain { net } => {
                let x = conditioned_batch(obs, eps, mode);
                let c = net.forward_batch(x.view())?;
                let values = c.output().column(0).to_vec();
                Ok((values, ValueCache::Plain { net: c }))
            }
        }
    }

    /// Parameter gradients of `Σ_b dvalues[b] · V_b`, one per net in [`Self::nets`] order.
    pub fn backward(&self, cache: &ValueCache, dvalues: &[f64]) -> Result<Vec<ParamVector>> {
        let mut grads = self.zero_grads();
        match (self, cache) {
            (Self::Decomposed { features, weights }, ValueCache::Decomposed { features: fc, weights: wc, index }) => {
                let xi = fc.output();
                let w = wc.output();
                let mut dxi = Array2::zeros(xi.dim());
                let mut dw = Array2::<f64>::zeros(w.dim());
                for (b, &u) in index.iter().enumerate() {
                    let g = dvalues[b];
                    dxi.row_mut(b).scaled_add(g, &w.row(u));
                    dw.row_mut(u).scaled_add(g, &xi.row(b));
                }
                features.backward(fc, dxi.view(), &mut grads[0])?;
                weights.backward(wc, dw.view(), &mut grads[1])?;
            }
            (Self::Plain { net }, ValueCache::Plain { net: c }) => {
                let dv = ArrayView2::from_shape((dvalues.len(), 1), dvalues).expect("column");
                net.backward(c, dv, &mut grads[0])?;
            }
            _ => return Err(Error::InvalidParams("value cache does not match network".into())),
        }
        Ok(grads)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticPair {
    pub mode: ConditioningMode,
    pub reward: ValueNet,
    pub cost: ValueNet,
}

impl CriticPair {
    pub fn init<R: Rng + ?Sized>(mode: ConditioningMode, dims: &AgentDims, rng: &mut R) -> Result<Self> {
        mode.validate()?;
        let make = |rng: &mut R| -> Result<ValueNet> {
            if mode.is_decomposed() {
                let fs = MlpSpec::new(OBS_DIM, &dims.hidden, dims.feature_dim, dims.activation);
                let ws = MlpSpec::new(1, &dims.hidden, dims.feature_dim, dims.activation);
                Ok(ValueNet::Decomposed { features: Net::new(fs, rng, 1.0)?, weights: Net::new(ws, rng, 1.0)? })
            } else {
                let s = MlpSpec::new(mode.input_dim(OBS_DIM), &dims.hidden, 1, dims.activation);
                Ok(ValueNet::Plain { net: Net::new(s, rng, 1.0)? })
            }
        };
        let reward = make(rng)?;
        let cost = make(rng)?;
        Ok(Self { mode, reward, cost })
    }

    pub fn head(&self, kind: ValueKind) -> &ValueNet {
        match kind {
            ValueKind::Reward => &self.reward,
            ValueKind::Cost => &self.cost,
        }
    }

    pub fn head_mut(&mut self, kind: ValueKind) -> &mut ValueNet {
        match kind {
            ValueKind::Reward => &mut self.reward,
            ValueKind::Cost => &mut self.cost,
        }
    }

    pub fn value(&self, obs: &Observation, eps: ConstraintLevel, kind: ValueKind) -> Result<f64> {
        let (v, _) = self.head(kind).forward(self.mode, std::slice::from_ref(obs), &[eps.value()])?;
        Ok(v[0])
    }

    pub fn values(&self, obs: &[Observation], eps: &[f64], kind: ValueKind) -> Result<Vec<f64>> {
        Ok(self.head(kind).forward(self.mode, obs, eps)?.0)
    }

    /// Mean squared error against `targets` and its parameter gradients.
    pub fn critic_loss(&self, obs: &[Observation], eps: &[f64], targets: &[f64], kind: ValueKind) -> Result<(f64, Vec<ParamVector>)> {
        if obs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if targets.len() != obs.len() {
            return Err(Error::LengthMismatch { expected: obs.len(), actual: targets.len() });
        }
        let head = self.head(kind);
        let (values, cache) = head.forward(self.mode, obs, eps)?;
        let n = obs.len() as f64;
        let mut loss = 0.0;
        let mut dv = Vec::with_capacity(values.len());
        for (v, t) in values.iter().zip(targets) {
            let r = v - t;
            loss += r * r;
            dv.push(2.0 * r / n);
        }
        let grads = head.backward(&cache, &dv)?;
        Ok((loss / n, grads))
    }
}

pub fn value(obs: &Observation, eps: ConstraintLevel, critics: &CriticPair, kind: ValueKind) -> Result<f64> {
    critics.value(obs, eps, kind)
}

use ndarray::{Array2, ArrayView2};

use crate::agent::{gaussian_entropy, gaussian_log_prob, PolicyParams};
use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::ParamVector;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrad {
    pub mean_net: ParamVector,
    pub log_std: [f64; ACTION_DIM],
}

impl PolicyGrad {
    pub fn norm(&self) -> f64 {
        self.mean_net.0.iter().chain(self.log_std.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.mean_net.0.iter_mut().for_each(|g| *g *= s);
        self.log_std.iter_mut().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.mean_net.is_finite() && self.log_std.iter().all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct SurrogateOutput {
    /// Negated clipped objective minus the entropy bonus.
    pub loss: f64,
    /// Mean clipped objective.
    pub objective: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad: PolicyGrad,
}

/// Probability-ratio objective `min(η Â, clip(η, 1 ± ε_clip) Â)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps_clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Clipped surrogate loss over a batch and its exact gradient.
///
/// `inputs` are the conditioned policy inputs, `raw_actions` the pre-clamp samples
/// the old log-probabilities were computed for.
pub fn surrogate_loss(
    policy: &PolicyParams,
    inputs: ArrayView2<'_, f64>,
    raw_actions: &[[f64; ACTION_DIM]],
    old_log_probs: &[f64],
    advantages: &[f64],
    eps_clip: f64,
    entropy_coef: f64,
) -> Result<SurrogateOutput> {
    surrogate_loss_bounded(policy, inputs, raw_actions, old_log_probs, advantages, eps_clip, entropy_coef, 0.0)
}

/// [`surrogate_loss`] plus `bound_coef · mean Σ_j max(0, |μ_j| - 1)²`, which keeps
/// action means from drifting into the clamped region where samples stop carrying
/// gradient signal.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_loss_bounded(
    policy: &PolicyParams,
    inputs: ArrayView2<'_, f64>,
    raw_actions: &[[f64; ACTION_DIM]],
    old_log_probs: &[f64],
    advantages: &[f64],
    eps_clip: f64,
    entropy_coef: f64,
    bound_coef: f64,
) -> Result<SurrogateOutput> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    for len in [raw_actions.len(), old_log_probs.len(), advantages.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, actual: len });
        }
    }
    let net = &policy.mean_net;
    let cache = net.forward_batch(inputs)?;
    let mean = cache.output();
    let log_std = policy.clamped_log_std();
    let inv_var = log_std.map(|l| (-2.0 * l).exp());
    let nf = n as f64;

    let mut objective = 0.0;
    let mut bound = 0.0;
    let mut clipped = 0usize;
    let mut dmean = Array2::<f64>::zeros((n, ACTION_DIM));
    let mut dlog_std = [0.0; ACTION_DIM];
    for b in 0..n {
        let m = [mean[[b, 0]], mean[[b, 1]]];
        let a = raw_actions[b];
        let lp = gaussian_log_prob(&a, &m, &log_std);
        let ratio = (lp - old_log_probs[b]).exp();
        let adv = advantages[b];
        let obj = clipped_objective(ratio, adv, eps_clip);
        objective += obj;
        // the unclipped branch is the active one iff it attains the min
        let dobj_dlp = if ratio * adv <= obj { ratio * adv } else { 0.0 };
        if dobj_dlp == 0.0 && adv != 0.0 {
            clipped += 1;
        }
        for j in 0..ACTION_DIM {
            let d = a[j] - m[j];
            dmean[[b, j]] = -dobj_dlp * d * inv_var[j] / nf;
            dlog_std[j] -= dobj_dlp * (d * d * inv_var[j] - 1.0) / nf;
            let excess = m[j].abs() - 1.0;
            if bound_coef > 0.0 && excess > 0.0 {
                bound += excess * excess;
                dmean[[b, j]] += bound_coef * 2.0 * excess * m[j].signum() / nf;
            }
        }
    }
    if !objective.is_finite() {
        return Err(Error::PolicyDivergence(format!("surrogate objective {objective}")));
    }
    let entropy = gaussian_entropy(&log_std);
    for (j, g) in dlog_std.iter_mut().enumerate() {
        // the clamp blocks the gradient outside the admissible range
        if policy.log_std[j] != log_std[j] {
            *g = 0.0;
        } else {
            *g -= entropy_coef;
        }
    }
    let mut gnet = net.zero_grad();
    net.backward(&cache, dmean.view(), &mut gnet)?;
    let objective = objective / nf;
    Ok(SurrogateOutput {
        loss: -objective - entropy_coef * entropy + bound_coef * bound / nf,
        objective,
        entropy,
        clip_fraction: clipped as f64 / nf,
        grad: PolicyGrad { mean_net: gnet, log_std: dlog_std },
    })
}

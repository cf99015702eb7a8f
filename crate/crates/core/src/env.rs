//! Deterministic 1-D impact walker.
//!
//! A point mass is driven by a thrust command whose effectiveness depends on a
//! traction factor `g(ŵ) = ŵ / (ŵ + v0)`, where `ŵ` is the commanded foot impact
//! speed. One foot strikes per control step in a fixed rotation. Faster tracking
//! needs more thrust and more traction, and both raise the noise cost, so velocity
//! tracking and quiet stepping are in direct tension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{self, ContactSnapshot, CostParams, NUM_FEET};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 2 + NUM_FEET;
pub const ACTION_DIM: usize = 2;

/// Which feet enter the per-step contact snapshot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactModel {
    /// Only the striking foot is loaded; the others read zero.
    StanceOnly,
    /// Every foot keeps the force and impact speed of its most recent strike, so the
    /// snapshot covers one full gait cycle.
    #[default]
    GaitCycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    /// Control period (s).
    pub dt: f64,
    /// Thrust gain (m/s² per unit thrust).
    pub c1: f64,
    /// Linear drag (1/s).
    pub c2: f64,
    /// Traction softness (m/s).
    pub v0: f64,
    pub u_max: f64,
    /// Largest commandable impact speed (m/s).
    pub vimp_max: f64,
    /// Stance force at zero thrust (N).
    pub f_base: f64,
    /// Additional stance force per unit thrust (N).
    pub c3: f64,
    pub episode_len: usize,
    pub v_target_range: [f64; 2],
    /// Width of the Gaussian tracking kernel (m²/s²).
    pub sigma_track: f64,
    pub contact_model: ContactModel,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            dt: 0.02,
            c1: 8.0,
            c2: 2.0,
            v0: 0.5,
            u_max: 1.0,
            vimp_max: 2.0,
            f_base: 30.0,
            c3: 70.0,
            episode_len: 200,
            v_target_range: [0.5, 2.25],
            sigma_track: 0.25,
            contact_model: ContactModel::GaitCycle,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("c1", self.c1),
            ("c2", self.c2),
            ("v0", self.v0),
            ("u_max", self.u_max),
            ("vimp_max", self.vimp_max),
            ("f_base", self.f_base),
            ("c3", self.c3),
            ("sigma_track", self.sigma_track),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("env.{name} = {v}")));
            }
        }
        if self.episode_len == 0 {
            return Err(Error::InvalidParams("env.episode_len = 0".into()));
        }
        let [lo, hi] = self.v_target_range;
        if !(0.0..=5.0).contains(&lo) || !(0.0..=5.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidParams(format!("env.v_target_range = [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn traction(&self, w_hat: f64) -> f64 {
        w_hat / (w_hat + self.v0)
    }

    /// Fixed point of the velocity recurrence under a constant action.
    pub fn steady_state_velocity(&self, u_hat: f64, w_hat: f64) -> f64 {
        self.c1 * u_hat * self.traction(w_hat) / self.c2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub v: f64,
    pub v_target: f64,
    /// Index of the next striking foot.
    pub phase: usize,
    pub t: usize,
    /// Most recent strike per foot.
    pub feet: ContactSnapshot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub v: f64,
    pub v_target: f64,
    pub phase: usize,
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(OBS_DIM);
        self.write_into(&mut out);
        out
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.push(self.v);
        out.push(self.v_target);
        for i in 0..NUM_FEET {
            out.push(if i == self.phase { 1.0 } else { 0.0 });
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Thrust command in `[-1, 1]`.
    pub u: f64,
    /// Impact-vigor command in `[-1, 1]`.
    pub w: f64,
}

impl Action {
    pub fn new(u: f64, w: f64) -> Self {
        Self { u, w }
    }

    pub fn clamped(&self) -> Self {
        Self { u: self.u.clamp(-1.0, 1.0), w: self.w.clamp(-1.0, 1.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    /// Normalised noise cost in `[0, 1]`.
    pub cost: f64,
    pub next_obs: Observation,
    pub done: bool,
    /// Snapshot the cost was computed from.
    pub contact: ContactSnapshot,
}

impl EnvState {
    pub fn observation(&self) -> Observation {
        Observation { v: self.v, v_target: self.v_target, phase: self.phase }
    }
}

/// Initial state with a commanded speed drawn uniformly from the target range.
pub fn reset(seed: u64, params: &EnvParams) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reset_with_rng(&mut rng, params)
}

pub fn reset_with_rng<R: Rng + ?Sized>(rng: &mut R, params: &EnvParams) -> EnvState {
    let [lo, hi] = params.v_target_range;
    let v_target = if hi > lo { rng.random_range(lo..hi) } else { lo };
    reset_with_target(v_target)
}

pub fn reset_with_target(v_target: f64) -> EnvState {
    EnvState { v: 0.0, v_target, phase: 0, t: 0, feet: ContactSnapshot::zero() }
}

/// Precomputed normalisation bounds so that stepping does not recompute them.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub env: EnvParams,
    pub cost: CostParams,
    bounds: (f64, f64),
}

impl Stepper {
    pub fn new(env: EnvParams, cost: CostParams) -> Result<Self> {
        env.validate()?;
        if cost.convention != cost::CostConvention::Monotone {
            return Err(Error::InvalidParams("environment cost requires the monotone convention".into()));
        }
        let bounds = cost::normalization_bounds(&cost)?;
        Ok(Self { env, cost, bounds })
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<(EnvState, Transition)> {
        let p = &self.env;
        if state.t >= p.episode_len {
            return Err(Error::EpisodeFinished);
        }
        let a = action.clamped();
        let u_hat = p.u_max * (a.u + 1.0) / 2.0;
        let w_hat = p.vimp_max * (a.w + 1.0) / 2.0;
        let g = p.traction(w_hat);
        let v_next = state.v + p.dt * (p.c1 * u_hat * g - p.c2 * state.v);

        let stance = state.phase;
        let force = p.f_base + p.c3 * u_hat;
        let mut feet = match p.contact_model {
            ContactModel::StanceOnly => ContactSnapshot::zero(),
            ContactModel::GaitCycle => state.feet,
        };
        feet.forces[stance] = force;
        feet.impact_velocities[stance] = w_hat;

        let err = v_next - state.v_target;
        let reward = (-err * err / p.sigma_track).exp();
        let cost = cost::normalize_with(&feet, &self.cost, self.bounds.0, self.bounds.1);

        let next = EnvState {
            v: v_next,
            v_target: state.v_target,
            phase: (state.phase + 1) % NUM_FEET,
            t: state.t + 1,
            feet,
        };
        let done = next.t == p.episode_len;
        let tr = Transition {
            obs: state.observation(),
            action: a,
            reward,
            cost,
            next_obs: next.observation(),
            done,
            contact: feet,
        };
        Ok((next, tr))
    }

    pub fn batch_step(&self, states: &[EnvState], actions: &[Action]) -> Result<Vec<(EnvState, Transition)>> {
        if states.len() != actions.len() {
            return Err(Error::LengthMismatch { expected: states.len(), actual: actions.len() });
        }
        states.iter().zip(actions).map(|(s, a)| self.step(s, *a)).collect()
    }
}

pub fn step(state: &EnvState, action: Action, env: &EnvParams, cost: &CostParams) -> Result<(EnvState, Transition)> {
    Stepper::new(env.clone(), *cost)?.step(state, action)
}

pub fn batch_step(
    states: &[EnvState],
    actions: &[Action],
    env: &EnvParams,
    cost: &CostParams,
) -> Result<Vec<(EnvState, Transition)>> {
    Stepper::new(env.clone(), *cost)?.batch_step(states, actions)
}

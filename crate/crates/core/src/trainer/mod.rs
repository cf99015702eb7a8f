//! PID-Lagrangian PPO over a schedule of constraint levels.
//!
//! Each iteration every environment acts with the constraint level it is bound to,
//! filling its own rollout buffer. Reward and cost advantages are estimated with
//! GAE, the level's multiplier is advanced by a PID step on the measured cost, and
//! the two advantages are merged as `(A_r - λ A_c) / (1 + λ)`. The actor minimises
//! the clipped surrogate averaged over levels; both critics regress onto their
//! bootstrapped returns.

pub mod gae;
pub mod lagrange;
pub mod surrogate;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentDims, ConditioningMode, ConstraintLevel, CriticPair, PolicyParams, ValueKind, LOG_STD_MAX, LOG_STD_MIN};
use crate::checkpoint::Checkpoint;
use crate::cost::CostParams;
use crate::env::{self, EnvParams, EnvState, Observation, Stepper, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{self, AdamState};

pub use gae::{gae, normalize};
pub use lagrange::{combined_advantage, update_lagrange, LagrangeState, PidGains};
pub use surrogate::{clipped_objective, surrogate_loss, surrogate_loss_bounded, PolicyGrad, SurrogateOutput};

/// What is being trained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    /// Conditioned policy with decomposed critics.
    Cncp,
    /// Conditioned policy, ε concatenated once.
    Conc,
    /// Conditioned policy, ε repeated before concatenation.
    Rc { repeat: usize },
    /// Unconditioned PPO-Lagrangian for a single fixed level.
    OracleSafe { epsilon: f64 },
    /// Unconditioned PPO on the scalarised reward `r - β c`.
    OracleMorl { beta: f64 },
    /// Unconditioned, unconstrained PPO.
    Ppo,
}

impl TrainMode {
    pub fn conditioning(&self) -> ConditioningMode {
        match self {
            Self::Cncp => ConditioningMode::Cncp,
            Self::Conc => ConditioningMode::Conc,
            Self::Rc { repeat } => ConditioningMode::Rc { repeat: *repeat },
            _ => ConditioningMode::Unconditioned,
        }
    }

    pub fn is_conditioned(&self) -> bool {
        matches!(self, Self::Cncp | Self::Conc | Self::Rc { .. })
    }

    pub fn is_constrained(&self) -> bool {
        !matches!(self, Self::OracleMorl { .. } | Self::Ppo)
    }

    pub fn reward_scale(&self) -> f64 {
        match self {
            Self::OracleMorl { beta } => *beta,
            _ => 0.0,
        }
    }

    pub fn fixed_epsilon(&self) -> Option<f64> {
        match self {
            Self::OracleSafe { epsilon } => Some(*epsilon),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Rc { repeat: 0 } => Err(Error::InvalidParams("rc repeat must be >= 1".into())),
            Self::OracleSafe { epsilon } => ConstraintLevel::new(epsilon).map(|_| ()),
            Self::OracleMorl { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(Error::InvalidParams(format!("morl reward scale {beta} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    /// Short label, e.g. `cncp`, `oracle_safe:0.2`.
    pub fn label(&self) -> String {
        match self {
            Self::Cncp => "cncp".into(),
            Self::Conc => "conc".into(),
            Self::Rc { repeat } if *repeat == ConditioningMode::RC_DEFAULT_REPEAT => "rc".into(),
            Self::Rc { repeat } => format!("rc:{repeat}"),
            Self::OracleSafe { epsilon } => format!("oracle_safe:{epsilon}"),
            Self::OracleMorl { beta } => format!("oracle_morl:{beta}"),
            Self::Ppo => "ppo".into(),
        }
    }

    /// Inverse of [`Self::label`].
    pub fn parse(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Config(format!("mode {head} needs a value, e.g. {head}:0.2")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("mode {s}: {e}")))
        };
        let mode = match head {
            "cncp" => Self::Cncp,
            "conc" => Self::Conc,
            "rc" => Self::Rc {
                repeat: match arg {
                    Some(a) => a.parse().map_err(|e| Error::Config(format!("mode {s}: {e}")))?,
                    None => ConditioningMode::RC_DEFAULT_REPEAT,
                },
            },
            "oracle_safe" => Self::OracleSafe { epsilon: num(arg)? },
            "oracle_morl" => Self::OracleMorl { beta: num(arg)? },
            "ppo" => Self::Ppo,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Sigmoid decay `1 / (1 + exp(k (t - t0)))`.
pub fn reward_weight_schedule(t: f64, t0: f64, k: f64) -> f64 {
    1.0 / (1.0 + (k * (t - t0)).exp())
}

/// Action-smoothness bonus whose weight decays over training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxReward {
    pub coef: f64,
    /// Iteration at which the weight crosses 1/2.
    pub midpoint: f64,
    pub steepness: f64,
}

impl Default for AuxReward {
    fn default() -> Self {
        Self { coef: 0.05, midpoint: 100.0, steepness: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Number of parallel environments; conditioned modes bind one level to each.
    pub num_envs: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub lambda_gae: f64,
    pub eps_clip: f64,
    pub epochs_per_iter: usize,
    pub minibatch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    /// Weight of the penalty on action means outside `[-1, 1]`.
    pub bound_coef: f64,
    pub max_grad_norm: f64,
    pub pid: PidGains,
    pub aux: AuxReward,
    /// Keep every multiplier at zero.
    pub freeze_multipliers: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            num_envs: 16,
            horizon: 256,
            iterations: 500,
            gamma: 0.9,
            lambda_gae: 0.95,
            eps_clip: 0.2,
            epochs_per_iter: 5,
            minibatch_size: 1024,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            entropy_coef: 0.0,
            bound_coef: 1.0,
            max_grad_norm: 1.0,
            pid: PidGains::default(),
            aux: AuxReward::default(),
            freeze_multipliers: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("trainer.{m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda_gae) {
            return bad("lambda_gae must lie in [0, 1]");
        }
        if !(self.eps_clip > 0.0) {
            return bad("eps_clip must be > 0");
        }
        if self.num_envs == 0 || self.minibatch_size == 0 || self.epochs_per_iter == 0 {
            return bad("num_envs, minibatch_size and epochs_per_iter must be >= 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning rates and max_grad_norm must be > 0");
        }
        Ok(())
    }
}

/// Constraint levels evenly spaced over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSchedule {
    pub levels: Vec<f64>,
}

impl ConstraintSchedule {
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("a uniform schedule needs at least 2 levels, got {n}")));
        }
        let levels = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        Ok(Self { levels })
    }
}

/// Transitions gathered by one environment during one iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub level: usize,
    pub epsilon: f64,
    pub obs: Vec<Observation>,
    pub raw_actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    /// Environment tracking reward.
    pub rewards: Vec<f64>,
    /// Reward stream the policy is trained on (scalarisation and auxiliary terms applied).
    pub train_rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub dones: Vec<bool>,
    pub values_r: Vec<f64>,
    pub values_c: Vec<f64>,
    pub bootstrap_r: f64,
    pub bootstrap_c: f64,
    /// Absolute velocity error after each step.
    pub tracking_errors: Vec<f64>,
    /// Mean per-step cost of each episode that finished inside this buffer.
    pub completed_episode_costs: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Conditioned policy inputs for this buffer's samples.
    pub fn policy_inputs(&self, mode: ConditioningMode) -> ndarray::Array2<f64> {
        agent::conditioned_batch(&self.obs, &vec![self.epsilon; self.len()], mode)
    }

    /// Clipped surrogate for this buffer alone.
    pub fn surrogate_loss(
        &self,
        policy: &PolicyParams,
        mode: ConditioningMode,
        advantages: &[f64],
        eps_clip: f64,
        entropy_coef: f64,
    ) -> Result<SurrogateOutput> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let x = self.policy_inputs(mode);
        surrogate_loss(policy, x.view(), &self.raw_actions, &self.log_probs, advantages, eps_clip, entropy_coef)
    }
}

/// Per-buffer GAE output.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageRecord {
    pub a_r: Vec<f64>,
    pub a_c: Vec<f64>,
    pub return_r: Vec<f64>,
    pub return_c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub epsilon: f64,
    pub mean_cost: f64,
    /// Cost fed to the multiplier update.
    pub measured_cost: f64,
    pub mean_reward: f64,
    pub tracking_error: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub levels: Vec<LevelMetrics>,
    pub actor_loss: f64,
    pub critic_loss_r: f64,
    pub critic_loss_c: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub aux_weight: f64,
}

impl IterationMetrics {
    pub fn mean_lambda(&self) -> f64 {
        self.levels.iter().map(|l| l.lambda).sum::<f64>() / self.levels.len() as f64
    }
}

struct Optimizers {
    actor: AdamState,
    log_std: AdamState,
    reward: Vec<AdamState>,
    cost: Vec<AdamState>,
}

pub struct Trainer {
    mode: TrainMode,
    config: TrainerConfig,
    dims: AgentDims,
    stepper: Stepper,
    policy: PolicyParams,
    critics: CriticPair,
    levels: Vec<f64>,
    env_level: Vec<usize>,
    lagrange: Vec<LagrangeState>,
    envs: Vec<EnvState>,
    prev_actions: Vec<Option<[f64; ACTION_DIM]>>,
    episode_cost: Vec<(f64, usize)>,
    opt: Optimizers,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(mode: TrainMode, config: TrainerConfig, dims: AgentDims, env: EnvParams, cost: CostParams) -> Result<Self> {
        let schedule = if mode.is_conditioned() { Some(ConstraintSchedule::uniform(config.num_envs)?) } else { None };
        Self::build(mode, config, dims, env, cost, schedule)
    }

    /// Conditioned training over an explicit schedule; environment `i` is bound to
    /// level `i mod levels`.
    pub fn with_schedule(
        mode: TrainMode,
        config: TrainerConfig,
        dims: AgentDims,
        env: EnvParams,
        cost: CostParams,
        schedule: ConstraintSchedule,
    ) -> Result<Self> {
        if !mode.is_conditioned() {
            return Err(Error::InvalidParams(format!("mode {} takes no schedule", mode.label())));
        }
        let n = schedule.levels.len();
        if n == 0 || n > config.num_envs {
            return Err(Error::InvalidParams(format!("{n} levels for {} environments", config.num_envs)));
        }
        for &e in &schedule.levels {
            ConstraintLevel::new(e)?;
        }
        Self::build(mode, config, dims, env, cost, Some(schedule))
    }

    fn build(
        mode: TrainMode,
        config: TrainerConfig,
        dims: AgentDims,
        env: EnvParams,
        cost: CostParams,
        schedule: Option<ConstraintSchedule>,
    ) -> Result<Self> {
        mode.validate()?;
        config.validate()?;
        let stepper = Stepper::new(env, cost)?;
        let conditioning = mode.conditioning();
        let (levels, env_level) = if let Some(s) = schedule {
            let n = s.levels.len();
            (s.levels, (0..config.num_envs).map(|i| i % n).collect())
        } else {
            let eps = mode.fixed_epsilon().unwrap_or(1.0);
            (vec![eps], vec![0; config.num_envs])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = PolicyParams::init(conditioning, &dims, &mut rng)?;
        let critics = CriticPair::init(conditioning, &dims, &mut rng)?;
        let envs = (0..config.num_envs).map(|_| env::reset_with_rng(&mut rng, &stepper.env)).collect();
        let opt = Optimizers {
            actor: AdamState::new(policy.mean_net.params.len()),
            log_std: AdamState::new(ACTION_DIM),
            reward: critics.reward.nets().iter().map(|n| AdamState::new(n.params.len())).collect(),
            cost: critics.cost.nets().iter().map(|n| AdamState::new(n.params.len())).collect(),
        };
        Ok(Self {
            mode,
            lagrange: vec![LagrangeState::new(config.pid); levels.len()],
            prev_actions: vec![None; config.num_envs],
            episode_cost: vec![(0.0, 0); config.num_envs],
            config,
            dims,
            stepper,
            policy,
            critics,
            levels,
            env_level,
            envs,
            opt,
            rng,
            iteration: 0,
        })
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn lagrange(&self) -> &[LagrangeState] {
        &self.lagrange
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn aux_weight(&self) -> f64 {
        let a = self.config.aux;
        if a.coef == 0.0 {
            return 0.0;
        }
        reward_weight_schedule(self.iteration as f64, a.midpoint, a.steepness)
    }

    pub fn collect_rollouts(&mut self) -> Result<Vec<RolloutBuffer>> {
        self.collect_rollouts_for(self.config.horizon)
    }

    /// Acts for `horizon` steps in every environment with the current policy.
    pub fn collect_rollouts_for(&mut self, horizon: usize) -> Result<Vec<RolloutBuffer>> {
        let n = self.envs.len();
        let mode = self.mode.conditioning();
        let beta = self.mode.reward_scale();
        let aux = self.config.aux.coef * self.aux_weight();
        let log_std = self.policy.clamped_log_std();
        let eps: Vec<f64> = self.env_level.iter().map(|&l| self.levels[l]).collect();
        let mut buffers: Vec<RolloutBuffer> = (0..n)
            .map(|i| RolloutBuffer { level: self.env_level[i], epsilon: eps[i], ..Default::default() })
            .collect();

        for _ in 0..horizon {
            let obs: Vec<Observation> = self.envs.iter().map(|s| s.observation()).collect();
            let x = agent::conditioned_batch(&obs, &eps, mode);
            let cache = self.policy.mean_net.forward_batch(x.view())?;
            let means = cache.output();
            if means.iter().any(|m| !m.is_finite()) {
                return Err(Error::PolicyDivergence("non-finite action mean during rollout".into()));
            }
            let vr = self.critics.values(&obs, &eps, ValueKind::Reward)?;
            let vc = self.critics.values(&obs, &eps, ValueKind::Cost)?;
            for i in 0..n {
                let s = agent::sample_from_mean([means[[i, 0]], means[[i, 1]]], log_std, &mut self.rng);
                let (next, tr) = self.stepper.step(&self.envs[i], s.action)?;
                let a = [tr.action.u, tr.action.w];
                let smooth = match self.prev_actions[i] {
                    Some(p) => -(a[0] - p[0]).powi(2) - (a[1] - p[1]).powi(2),
                    None => 0.0,
                };
                let b = &mut buffers[i];
                b.obs.push(obs[i]);
                b.raw_actions.push(s.raw);
                b.log_probs.push(s.log_prob);
                b.rewards.push(tr.reward);
                b.train_rewards.push(tr.reward - beta * tr.cost + aux * smooth);
                b.costs.push(tr.cost);
                b.dones.push(tr.done);
                b.values_r.push(vr[i]);
                b.values_c.push(vc[i]);
                b.tracking_errors.push((tr.next_obs.v - tr.next_obs.v_target).abs());
                let ec = &mut self.episode_cost[i];
                ec.0 += tr.cost;
                ec.1 += 1;
                if tr.done {
                    b.completed_episode_costs.push(ec.0 / ec.1 as f64);
                    *ec = (0.0, 0);
                    self.envs[i] = env::reset_with_rng(&mut self.rng, &self.stepper.env);
                    self.prev_actions[i] = None;
                } else {
                    self.envs[i] = next;
                    self.prev_actions[i] = Some(a);
                }
            }
        }
        let obs: Vec<Observation> = self.envs.iter().map(|s| s.observation()).collect();
        let br = self.critics.values(&obs, &eps, ValueKind::Reward)?;
        let bc = self.critics.values(&obs, &eps, ValueKind::Cost)?;
        for (i, b) in buffers.iter_mut().enumerate() {
            b.bootstrap_r = br[i];
            b.bootstrap_c = bc[i];
        }
        Ok(buffers)
    }

    pub fn advantages(&self, buffer: &RolloutBuffer) -> Result<AdvantageRecord> {
        let c = &self.config;
        let (a_r, return_r) = gae(&buffer.values_r, buffer.bootstrap_r, &buffer.train_rewards, &buffer.dones, c.gamma, c.lambda_gae)?;
        let (a_c, return_c) = gae(&buffer.values_c, buffer.bootstrap_c, &buffer.costs, &buffer.dones, c.gamma, c.lambda_gae)?;
        Ok(AdvantageRecord { a_r, a_c, return_r, return_c })
    }

    /// One optimisation pass over freshly collected buffers.
    pub fn train_iteration(&mut self, buffers: &[RolloutBuffer]) -> Result<IterationMetrics> {
        let mode = self.mode.conditioning();
        let records: Vec<AdvantageRecord> = buffers.iter().map(|b| self.advantages(b)).collect::<Result<_>>()?;

        // per-level multiplier updates and combined advantages
        let mut level_metrics = Vec::with_capacity(self.levels.len());
        let mut combined: Vec<Vec<f64>> = vec![Vec::new(); buffers.len()];
        for level in 0..self.levels.len() {
            let members: Vec<usize> = (0..buffers.len()).filter(|&i| buffers[i].level == level).collect();
            let steps: usize = members.iter().map(|&i| buffers[i].len()).sum();
            if steps == 0 {
                continue;
            }
            let eps = ConstraintLevel::new(self.levels[level])?;
            let all_costs = members.iter().flat_map(|&i| buffers[i].costs.iter().copied());
            let mean_cost = all_costs.sum::<f64>() / steps as f64;
            let episodes: Vec<f64> = members.iter().flat_map(|&i| buffers[i].completed_episode_costs.iter().copied()).collect();
            let measured = if episodes.is_empty() { mean_cost } else { episodes.iter().sum::<f64>() / episodes.len() as f64 };
            if self.mode.is_constrained() && !self.config.freeze_multipliers {
                self.lagrange[level] = self.lagrange[level].update(measured, eps)?;
            }
            let lambda = self.lagrange[level].lambda;

            let mut a_r: Vec<f64> = members.iter().flat_map(|&i| records[i].a_r.iter().copied()).collect();
            let mut a_c: Vec<f64> = members.iter().flat_map(|&i| records[i].a_c.iter().copied()).collect();
            normalize(&mut a_r);
            normalize(&mut a_c);
            let mut k = 0;
            for &i in &members {
                let len = buffers[i].len();
                combined[i] = (k..k + len).map(|j| combined_advantage(a_r[j], a_c[j], lambda)).collect::<Result<_>>()?;
                k += len;
            }
            let mean = |f: &dyn Fn(&RolloutBuffer) -> &Vec<f64>| {
                members.iter().flat_map(|&i| f(&buffers[i]).iter().copied()).sum::<f64>() / steps as f64
            };
            level_metrics.push(LevelMetrics {
                epsilon: eps.value(),
                mean_cost,
                measured_cost: measured,
                mean_reward: mean(&|b| &b.rewards),
                tracking_error: mean(&|b| &b.tracking_errors),
                lambda,
            });
        }

        // flatten all samples; equal-sized buffers make the pooled mean the level average
        let mut obs = Vec::new();
        let mut eps = Vec::new();
        let mut raw = Vec::new();
        let mut old_lp = Vec::new();
        let mut adv = Vec::new();
        let mut ret_r = Vec::new();
        let mut ret_c = Vec::new();
        for (i, b) in buffers.iter().enumerate() {
            obs.extend_from_slice(&b.obs);
            eps.extend(std::iter::repeat_n(b.epsilon, b.len()));
            raw.extend_from_slice(&b.raw_actions);
            old_lp.extend_from_slice(&b.log_probs);
            adv.extend_from_slice(&combined[i]);
            ret_r.extend_from_slice(&records[i].return_r);
            ret_c.extend_from_slice(&records[i].return_c);
        }
        let total = obs.len();
        if total == 0 {
            return Err(Error::EmptyBatch);
        }
        let inputs = agent::conditioned_batch(&obs, &eps, mode);

        let mut idx: Vec<usize> = (0..total).collect();
        let (mut actor_loss, mut lr_sum, mut lc_sum, mut entropy, mut clip_frac, mut batches) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
        for _ in 0..self.config.epochs_per_iter {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(self.config.minibatch_size) {
                let x = inputs.select(Axis(0), chunk);
                let pick = |v: &[f64]| chunk.iter().map(|&j| v[j]).collect::<Vec<f64>>();
                let mb_raw: Vec<[f64; ACTION_DIM]> = chunk.iter().map(|&j| raw[j]).collect();
                let out = surrogate_loss_bounded(
                    &self.policy,
                    x.view(),
                    &mb_raw,
                    &pick(&old_lp),
                    &pick(&adv),
                    self.config.eps_clip,
                    self.config.entropy_coef,
                    self.config.bound_coef,
                )?;
                self.apply_actor(out.grad)?;

                let mb_obs: Vec<Observation> = chunk.iter().map(|&j| obs[j]).collect();
                let mb_eps = pick(&eps);
                let lr = self.update_critic(ValueKind::Reward, &mb_obs, &mb_eps, &pick(&ret_r))?;
                let lc = self.update_critic(ValueKind::Cost, &mb_obs, &mb_eps, &pick(&ret_c))?;
                if !(out.loss.is_finite() && lr.is_finite() && lc.is_finite()) {
                    return Err(Error::TrainingDivergence {
                        iteration: self.iteration,
                        detail: format!("actor {} critic_r {lr} critic_c {lc}", out.loss),
                    });
                }
                actor_loss += out.loss;
                lr_sum += lr;
                lc_sum += lc;
                entropy += out.entropy;
                clip_frac += out.clip_fraction;
                batches += 1;
            }
        }
        let nb = batches.max(1) as f64;
        let metrics = IterationMetrics {
            iteration: self.iteration,
            levels: level_metrics,
            actor_loss: actor_loss / nb,
            critic_loss_r: lr_sum / nb,
            critic_loss_c: lc_sum / nb,
            entropy: entropy / nb,
            clip_fraction: clip_frac / nb,
            aux_weight: self.aux_weight(),
        };
        self.iteration += 1;
        Ok(metrics)
    }

    fn apply_actor(&mut self, mut grad: PolicyGrad) -> Result<()> {
        if !grad.is_finite() {
            return Err(self.diverged("non-finite actor gradient"));
        }
        let norm = grad.norm();
        if norm > self.config.max_grad_norm {
            grad.scale(self.config.max_grad_norm / norm);
        }
        let lr = self.config.actor_lr;
        nn::adam_update(&mut self.policy.mean_net.params.0, &grad.mean_net.0, &mut self.opt.actor, lr)?;
        nn::adam_update(&mut self.policy.log_std, &grad.log_std, &mut self.opt.log_std, lr)?;
        for l in &mut self.policy.log_std {
            *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    fn update_critic(&mut self, kind: ValueKind, obs: &[Observation], eps: &[f64], targets: &[f64]) -> Result<f64> {
        let (loss, mut grads) = self.critics.critic_loss(obs, eps, targets, kind)?;
        let norm = grads.iter().flat_map(|g| g.0.iter()).map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(self.diverged("non-finite critic gradient"));
        }
        if norm > self.config.max_grad_norm {
            let s = self.config.max_grad_norm / norm;
            grads.iter_mut().for_each(|g| g.0.iter_mut().for_each(|x| *x *= s));
        }
        let lr = self.config.critic_lr;
        let states = match kind {
            ValueKind::Reward => &mut self.opt.reward,
            ValueKind::Cost => &mut self.opt.cost,
        };
        for ((net, g), st) in self.critics.head_mut(kind).nets_mut().into_iter().zip(&grads).zip(states.iter_mut()) {
            nn::adam_update(&mut net.params.0, &g.0, st, lr)?;
        }
        Ok(loss)
    }

    fn diverged(&self, detail: &str) -> Error {
        Error::TrainingDivergence { iteration: self.iteration, detail: detail.into() }
    }

    /// Collect, then optimise.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let buffers = self.collect_rollouts()?;
        self.train_iteration(&buffers)
    }

    /// Runs the configured number of iterations, reporting each one to `on_iter`.
    pub fn run(&mut self, mut on_iter: impl FnMut(&IterationMetrics) -> Result<()>) -> Result<Vec<IterationMetrics>> {
        let mut all = Vec::with_capacity(self.config.iterations);
        while self.iteration < self.config.iterations {
            let m = self.step()?;
            on_iter(&m)?;
            all.push(m);
        }
        Ok(all)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.mode,
            self.config.seed,
            self.iteration,
            self.dims.clone(),
            self.policy.clone(),
            self.critics.clone(),
            self.stepper.env.clone(),
            self.stepper.cost,
            self.levels.clone(),
            self.lagrange.clone(),
        )
    }
}

/// Result of a complete training run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
}

pub fn train(mode: TrainMode, config: &TrainerConfig, dims: &AgentDims, env: &EnvParams, cost: &CostParams) -> Result<TrainOutcome> {
    let mut t = Trainer::new(mode, config.clone(), dims.clone(), env.clone(), *cost)?;
    let metrics = t.run(|_| Ok(()))?;
    Ok(TrainOutcome { checkpoint: t.checkpoint(), metrics })
}

/// Single-level unconditioned PPO-Lagrangian.
pub fn train_oracle_safe(epsilon: f64, config: &TrainerConfig, dims: &AgentDims, env: &EnvParams, cost: &CostParams) -> Result<TrainOutcome> {
    train(TrainMode::OracleSafe { epsilon }, config, dims, env, cost)
}

/// Unconstrained PPO on `r - β c`.
pub fn train_oracle_morl(beta: f64, config: &TrainerConfig, dims: &AgentDims, env: &EnvParams, cost: &CostParams) -> Result<TrainOutcome> {
    train(TrainMode::OracleMorl { beta }, config, dims, env, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config(seed: u64) -> TrainerConfig {
        TrainerConfig { num_envs: 4, horizon: 32, iterations: 3, minibatch_size: 64, epochs_per_iter: 2, seed, ..Default::default() }
    }

    fn small_dims() -> AgentDims {
        AgentDims { hidden: vec![16, 16], feature_dim: 4, ..Default::default() }
    }

    fn trainer(mode: TrainMode, cfg: TrainerConfig) -> Trainer {
        Trainer::new(mode, cfg, small_dims(), EnvParams::default(), CostParams::default()).unwrap()
    }

    #[test]
    fn schedule_is_uniform() {
        let s = ConstraintSchedule::uniform(16).unwrap();
        assert_eq!(s.levels.len(), 16);
        assert_eq!(s.levels[0], 0.0);
        assert_eq!(s.levels[15], 1.0);
        assert!(s.levels.windows(2).all(|w| w[1] > w[0]));
        let gaps: Vec<f64> = s.levels.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (g - 1.0 / 15.0).abs() < 1e-12));
        assert!(ConstraintSchedule::uniform(1).is_err());
    }

    #[test]
    fn sigmoid_schedule() {
        assert_eq!(reward_weight_schedule(2000.0, 2000.0, 0.01), 0.5);
        assert!(reward_weight_schedule(0.0, 2000.0, 0.01) > 0.999);
        assert!(reward_weight_schedule(5000.0, 2000.0, 0.01) < 1e-10);
        assert_relative_eq!(reward_weight_schedule(2300.0, 2000.0, 0.01), 1.0 / (1.0 + 3f64.exp()), max_relative = 1e-12);
        assert_relative_eq!(reward_weight_schedule(2300.0, 2000.0, 0.01), 0.0474, epsilon = 1e-4);
    }

    #[test]
    fn mode_labels_round_trip() {
        for m in [
            TrainMode::Cncp,
            TrainMode::Conc,
            TrainMode::Rc { repeat: 10 },
            TrainMode::Rc { repeat: 3 },
            TrainMode::OracleSafe { epsilon: 0.2 },
            TrainMode::OracleMorl { beta: 4.0 },
            TrainMode::Ppo,
        ] {
            assert_eq!(TrainMode::parse(&m.label()).unwrap(), m);
        }
        assert!(TrainMode::parse("oracle_safe").is_err());
        assert!(TrainMode::parse("oracle_safe:1.5").is_err());
        assert!(TrainMode::parse("oracle_morl:-1").is_err());
        assert!(TrainMode::parse("sac").is_err());
    }

    #[test]
    fn zero_horizon_gives_empty_buffers() {
        let mut t = trainer(TrainMode::Cncp, small_config(0));
        let b = t.collect_rollouts_for(0).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|b| b.is_empty()));
    }

    #[test]
    fn buffers_bind_their_level() {
        let mut t = trainer(TrainMode::Rc { repeat: 10 }, small_config(0));
        let buffers = t.collect_rollouts().unwrap();
        for (i, b) in buffers.iter().enumerate() {
            assert_eq!(b.len(), 32);
            assert_eq!(b.epsilon, t.levels()[i]);
            let x = b.policy_inputs(ConditioningMode::Rc { repeat: 10 });
            assert!(x.rows().into_iter().all(|r| r.iter().skip(6).all(|v| *v == b.epsilon)));
        }
    }

    #[test]
    fn custom_schedule_cycles_over_envs() {
        let schedule = ConstraintSchedule { levels: vec![0.1, 0.7] };
        let mut t = Trainer::with_schedule(TrainMode::Conc, small_config(0), small_dims(), EnvParams::default(), CostParams::default(), schedule.clone())
            .unwrap();
        assert_eq!(t.levels(), &[0.1, 0.7]);
        assert_eq!(t.lagrange().len(), 2);
        let eps: Vec<f64> = t.collect_rollouts().unwrap().iter().map(|b| b.epsilon).collect();
        assert_eq!(eps, vec![0.1, 0.7, 0.1, 0.7]);

        let build = |mode, levels: Vec<f64>| {
            Trainer::with_schedule(mode, small_config(0), small_dims(), EnvParams::default(), CostParams::default(), ConstraintSchedule { levels })
        };
        assert!(build(TrainMode::Ppo, vec![0.1]).is_err());
        assert!(build(TrainMode::Cncp, vec![]).is_err());
        assert!(build(TrainMode::Cncp, vec![0.0, 0.2, 0.4, 0.6, 0.8]).is_err());
        assert!(build(TrainMode::Cncp, vec![1.5]).is_err());
    }

    #[test]
    fn rollouts_are_deterministic() {
        let a = trainer(TrainMode::Cncp, small_config(3)).collect_rollouts().unwrap();
        let b = trainer(TrainMode::Cncp, small_config(3)).collect_rollouts().unwrap();
        assert_eq!(a, b);
        let c = trainer(TrainMode::Cncp, small_config(4)).collect_rollouts().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn episodes_reset_inside_rollouts() {
        let mut cfg = small_config(1);
        cfg.horizon = 450;
        let mut t = trainer(TrainMode::Conc, cfg);
        let b = t.collect_rollouts().unwrap();
        for buf in &b {
            assert_eq!(buf.dones.iter().filter(|d| **d).count(), 2);
            assert_eq!(buf.completed_episode_costs.len(), 2);
        }
    }

    #[test]
    fn buffer_isolation() {
        let mut t = trainer(TrainMode::Conc, small_config(2));
        let mut buffers = t.collect_rollouts().unwrap();
        let adv: Vec<f64> = (0..32).map(|k| (k as f64).sin()).collect();
        let before = buffers[1].surrogate_loss(t.policy(), ConditioningMode::Conc, &adv, 0.2, 0.0).unwrap().loss;
        buffers[2].epsilon = 0.123;
        buffers[3].obs.iter_mut().for_each(|o| o.v = 99.0);
        let after = buffers[1].surrogate_loss(t.policy(), ConditioningMode::Conc, &adv, 0.2, 0.0).unwrap().loss;
        assert_eq!(before, after);
    }

    #[test]
    fn training_reports_every_level() {
        let mut t = trainer(TrainMode::Cncp, small_config(5));
        let metrics = t.run(|_| Ok(())).unwrap();
        assert_eq!(metrics.len(), 3);
        for m in &metrics {
            assert_eq!(m.levels.len(), 4);
            for l in &m.levels {
                assert!((0.0..=1.0).contains(&l.mean_cost));
                assert!(l.tracking_error >= 0.0);
                assert!(l.lambda >= 0.0);
            }
        }
        assert!(t.policy().is_finite());
    }

    #[test]
    fn oracle_uses_one_level() {
        let mut t = trainer(TrainMode::OracleSafe { epsilon: 0.0 }, small_config(5));
        assert_eq!(t.levels(), &[0.0]);
        let m = t.step().unwrap();
        assert_eq!(m.levels.len(), 1);
        // cost is never below zero so the zero budget is always violated
        assert!(m.levels[0].lambda > 0.0);
        let ck = t.checkpoint();
        assert_eq!(ck.method.fixed_epsilon(), Some(0.0));
    }

    #[test]
    fn morl_zero_matches_ppo() {
        let a = train(TrainMode::OracleMorl { beta: 0.0 }, &small_config(9), &small_dims(), &EnvParams::default(), &CostParams::default()).unwrap();
        let b = train(TrainMode::Ppo, &small_config(9), &small_dims(), &EnvParams::default(), &CostParams::default()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.checkpoint.policy, b.checkpoint.policy);
    }

    #[test]
    fn frozen_multipliers_reduce_to_plain_ppo() {
        let mut cfg = small_config(11);
        cfg.freeze_multipliers = true;
        let safe = train(TrainMode::OracleSafe { epsilon: 0.0 }, &cfg, &small_dims(), &EnvParams::default(), &CostParams::default()).unwrap();
        let ppo = train(TrainMode::Ppo, &small_config(11), &small_dims(), &EnvParams::default(), &CostParams::default()).unwrap();
        assert_eq!(safe.checkpoint.policy, ppo.checkpoint.policy);
        assert!(safe.metrics.iter().all(|m| m.levels[0].lambda == 0.0));
    }

    #[test]
    fn single_level_constrained_run() {
        let mut cfg = small_config(12);
        cfg.num_envs = 2;
        let mut t = trainer(TrainMode::OracleSafe { epsilon: 0.5 }, cfg);
        t.step().unwrap();
        assert_eq!(t.lagrange().len(), 1);
    }
}

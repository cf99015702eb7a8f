//! Deterministic evaluation of checkpoints over an (ε, v_target, seed) grid.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agent::{self, ConstraintLevel};
use crate::checkpoint::Checkpoint;
use crate::config::EvalConfig;
use crate::env::{self, Stepper};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub method: String,
    pub epsilon: f64,
    pub v_target: f64,
    pub seed: u64,
    /// Mean per-step normalised cost over the episode.
    pub mean_cost: f64,
    /// Mean absolute velocity error over the episode (m/s).
    pub tracking_error: f64,
}

/// One deterministic episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub velocities: Vec<f64>,
    pub costs: Vec<f64>,
    pub v_target: f64,
}

impl Episode {
    pub fn mean_cost(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }

    pub fn tracking_error(&self) -> f64 {
        self.velocities.iter().map(|v| (v - self.v_target).abs()).sum::<f64>() / self.velocities.len() as f64
    }
}

/// Runs the policy's mean action for a full episode at a fixed commanded speed.
pub fn rollout(ck: &Checkpoint, epsilon: f64, v_target: f64) -> Result<Episode> {
    let eps = ConstraintLevel::new(epsilon)?;
    let stepper = Stepper::new(ck.env.clone(), ck.cost)?;
    let mut state = env::reset_with_target(v_target);
    let mut ep = Episode { velocities: Vec::new(), costs: Vec::new(), v_target };
    loop {
        let a = agent::act_deterministic(&state.observation(), eps, &ck.policy, ck.conditioning)?;
        let (next, tr) = stepper.step(&state, a)?;
        ep.velocities.push(next.v);
        ep.costs.push(tr.cost);
        if tr.done {
            return Ok(ep);
        }
        state = next;
    }
}

/// Method family name used to group records, e.g. `oracle_safe` for `oracle_safe:0.2`.
pub fn method_family(ck: &Checkpoint) -> String {
    let label = ck.method.label();
    label.split(':').next().unwrap_or_default().to_string()
}

/// Evaluates every grid cell. Policies trained for a single fixed ε are only
/// evaluated at that level.
pub fn evaluate(ck: &Checkpoint, grid: &EvalConfig, method: Option<&str>) -> Result<Vec<EvalRecord>> {
    let name = method.map(str::to_string).unwrap_or_else(|| method_family(ck));
    let epsilons = match ck.training_epsilon() {
        Some(e) => vec![e],
        None => grid.epsilons.clone(),
    };
    let mut out = Vec::with_capacity(epsilons.len() * grid.velocities.len() * grid.seeds);
    for &epsilon in &epsilons {
        for &v_target in &grid.velocities {
            // the rollout is deterministic; seeds label repeated cells
            let ep = rollout(ck, epsilon, v_target)?;
            for seed in 0..grid.seeds as u64 {
                out.push(EvalRecord {
                    method: name.clone(),
                    epsilon,
                    v_target,
                    seed,
                    mean_cost: ep.mean_cost(),
                    tracking_error: ep.tracking_error(),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut w: W, records: &[EvalRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads line-delimited records; blank lines are skipped.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord =
            serde_json::from_str(&line).map_err(|e| Error::SchemaMismatch(format!("line {}: {e}", i + 1)))?;
        if !(rec.mean_cost.is_finite() && rec.tracking_error.is_finite() && rec.epsilon.is_finite()) {
            return Err(Error::SchemaMismatch(format!("line {}: non-finite value", i + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentDims;
    use crate::cost::{self, CostParams};
    use crate::env::EnvParams;
    use crate::trainer::{TrainMode, Trainer, TrainerConfig};

    fn checkpoint(mode: TrainMode) -> Checkpoint {
        let cfg = TrainerConfig { num_envs: 2, horizon: 8, iterations: 1, minibatch_size: 16, epochs_per_iter: 1, ..Default::default() };
        let dims = AgentDims { hidden: vec![8], feature_dim: 3, ..Default::default() };
        Trainer::new(mode, cfg, dims, EnvParams::default(), CostParams::default()).unwrap().checkpoint()
    }

    #[test]
    fn grid_cardinality() {
        let recs = evaluate(&checkpoint(TrainMode::Cncp), &EvalConfig::default(), None).unwrap();
        assert_eq!(recs.len(), 168);
        assert!(recs.iter().all(|r| r.method == "cncp"));
    }

    #[test]
    fn oracle_uses_training_level() {
        let recs = evaluate(&checkpoint(TrainMode::OracleSafe { epsilon: 0.4 }), &EvalConfig::default(), None).unwrap();
        assert_eq!(recs.len(), 21);
        assert!(recs.iter().all(|r| r.epsilon == 0.4 && r.method == "oracle_safe"));
    }

    #[test]
    fn deterministic_log() {
        let ck = checkpoint(TrainMode::Conc);
        let grid = EvalConfig::default();
        assert_eq!(evaluate(&ck, &grid, None).unwrap(), evaluate(&ck, &grid, None).unwrap());
    }

    #[test]
    fn rollout_cost_matches_snapshot_replay() {
        let ck = checkpoint(TrainMode::Cncp);
        let ep = rollout(&ck, 0.5, 1.5).unwrap();
        assert_eq!(ep.costs.len(), ck.env.episode_len);
        let stepper = Stepper::new(ck.env.clone(), ck.cost).unwrap();
        let mut s = env::reset_with_target(1.5);
        let eps = ConstraintLevel::new(0.5).unwrap();
        for c in &ep.costs {
            let a = agent::act_deterministic(&s.observation(), eps, &ck.policy, ck.conditioning).unwrap();
            let (n, tr) = stepper.step(&s, a).unwrap();
            assert!((cost::normalized_cost(&tr.contact, &ck.cost).unwrap() - c).abs() < 1e-9);
            s = n;
        }
    }

    #[test]
    fn records_round_trip_and_schema() {
        let recs = evaluate(&checkpoint(TrainMode::Ppo), &EvalConfig { seeds: 1, ..Default::default() }, Some("ppo")).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
        assert!(matches!(read_records("{\"method\":\"x\"}\n".as_bytes()), Err(Error::SchemaMismatch(_))));
    }
}

//! Versioned checkpoint files.
//!
//! A checkpoint is a single JSON document holding the policy, both critics, the
//! environment and cost parameters it was trained on, and the trainer's multiplier
//! state. Floats are written with round-trip precision so a save/load cycle is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentDims, ConditioningMode, CriticPair, PolicyParams};
use crate::cost::CostParams;
use crate::env::EnvParams;
use crate::error::{Error, Result};
use crate::trainer::{LagrangeState, TrainMode};

pub const FORMAT: &str = "quietgait-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub method: TrainMode,
    pub conditioning: ConditioningMode,
    pub seed: u64,
    pub iterations: usize,
    pub dims: AgentDims,
    pub policy: PolicyParams,
    pub critics: CriticPair,
    pub env: EnvParams,
    pub cost: CostParams,
    /// Constraint levels the trainer held multipliers for.
    pub levels: Vec<f64>,
    pub lagrange: Vec<LagrangeState>,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<serde_json::Value>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: TrainMode,
        seed: u64,
        iterations: usize,
        dims: AgentDims,
        policy: PolicyParams,
        critics: CriticPair,
        env: EnvParams,
        cost: CostParams,
        levels: Vec<f64>,
        lagrange: Vec<LagrangeState>,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            conditioning: method.conditioning(),
            method,
            seed,
            iterations,
            dims,
            policy,
            critics,
            env,
            cost,
            levels,
            lagrange,
        }
    }

    /// Constraint level an unconditioned policy was trained for, if any.
    pub fn training_epsilon(&self) -> Option<f64> {
        self.method.fixed_epsilon()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)?;
        if header.format.as_deref() != Some(FORMAT) {
            return Err(Error::CheckpointVersion {
                expected: VERSION.to_string(),
                found: format!("format {:?}", header.format.unwrap_or_default()),
            });
        }
        match header.version.as_ref().and_then(|v| v.as_u64()) {
            Some(v) if v == VERSION as u64 => {}
            other => {
                return Err(Error::CheckpointVersion {
                    expected: VERSION.to_string(),
                    found: other.map(|v| v.to_string()).unwrap_or_else(|| format!("{:?}", header.version)),
                })
            }
        }
        let ck: Self = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.cost.validate()?;
        self.method.validate()?;
        if self.conditioning != self.method.conditioning() {
            return Err(Error::SchemaMismatch("conditioning does not match method".into()));
        }
        let expected_in = self.conditioning.input_dim(crate::env::OBS_DIM);
        if self.policy.mean_net.spec.input_dim != expected_in {
            return Err(Error::DimMismatch { expected: expected_in, actual: self.policy.mean_net.spec.input_dim });
        }
        for net in std::iter::once(&self.policy.mean_net)
            .chain(self.critics.reward.nets())
            .chain(self.critics.cost.nets())
        {
            net.spec.validate()?;
            if net.params.len() != net.spec.num_params() {
                return Err(Error::LengthMismatch { expected: net.spec.num_params(), actual: net.params.len() });
            }
        }
        if !self.policy.is_finite() {
            return Err(Error::PolicyDivergence("checkpoint policy has non-finite parameters".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{Trainer, TrainerConfig};

    fn sample() -> Checkpoint {
        let cfg = TrainerConfig { num_envs: 2, horizon: 8, iterations: 1, minibatch_size: 16, epochs_per_iter: 1, ..Default::default() };
        let dims = AgentDims { hidden: vec![8], feature_dim: 3, ..Default::default() };
        let mut t = Trainer::new(TrainMode::Cncp, cfg, dims, EnvParams::default(), CostParams::default()).unwrap();
        t.step().unwrap();
        t.checkpoint()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.policy.mean_net.params.0.iter().zip(&ck.policy.mean_net.params.0) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.hash().unwrap(), ck.hash().unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn version_mismatch_rejected() {
        let ck = sample();
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["version"] = 2.into();
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { .. }));
        v["version"] = 1.into();
        v["format"] = "other".into();
        assert!(matches!(Checkpoint::from_json(&v.to_string()), Err(Error::CheckpointVersion { .. })));
    }

    #[test]
    fn truncated_params_rejected() {
        let mut ck = sample();
        ck.policy.mean_net.params.0.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn records_oracle_epsilon() {
        let mut ck = sample();
        ck.method = TrainMode::OracleSafe { epsilon: 0.3 };
        assert_eq!(ck.training_epsilon(), Some(0.3));
    }
}

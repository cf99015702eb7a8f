//! Experiment configuration files (TOML) with dotted-path overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentDims;
use crate::cost::CostParams;
use crate::env::EnvParams;
use crate::error::{Error, Result};
use crate::trainer::{TrainMode, TrainerConfig};

pub const DEFAULT_EVAL_EPSILONS: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_EVAL_VELOCITIES: [f64; 7] = [0.5, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25];

mod mode_label {
    use super::TrainMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &TrainMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.label())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TrainMode, D::Error> {
        let s = String::deserialize(d)?;
        TrainMode::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// `cncp`, `conc`, `rc[:repeat]`, `oracle_safe:ε`, `oracle_morl:β` or `ppo`.
    #[serde(with = "mode_label")]
    pub mode: TrainMode,
    pub dims: AgentDims,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { mode: TrainMode::Cncp, dims: AgentDims::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub epsilons: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Evaluation seeds per cell.
    pub seeds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { epsilons: DEFAULT_EVAL_EPSILONS.to_vec(), velocities: DEFAULT_EVAL_VELOCITIES.to_vec(), seeds: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvParams,
    pub cost: CostParams,
    pub trainer: TrainerConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.cost.validate()?;
        self.trainer.validate()?;
        self.agent.mode.validate()?;
        if self.agent.dims.hidden.is_empty() || self.agent.dims.hidden.contains(&0) || self.agent.dims.feature_dim == 0 {
            return Err(Error::Config("agent: hidden widths and feature_dim must be >= 1".into()));
        }
        if let Some(e) = self.eval.epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("eval.epsilons: {e} is outside [0, 1]")));
        }
        if self.eval.epsilons.is_empty() || self.eval.velocities.is_empty() {
            return Err(Error::Config("eval: epsilons and velocities must be nonempty".into()));
        }
        if self.eval.seeds == 0 {
            return Err(Error::Config("eval.seeds must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `a.b.c=value` overrides. Values are read as TOML literals, falling
    /// back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_literal(raw.trim());
            set_path(&mut root, path.trim(), value)?;
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("{path}: {} is not a table", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            let slot = table.get_mut(*k).ok_or_else(|| Error::Config(format!("{path}: unknown field {k:?}")))?;
            // integers given for float fields stay floats
            *slot = match (&*slot, value) {
                (toml::Value::Float(_), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                (_, v) => v,
            };
            return Ok(());
        }
        cur = table.get_mut(*k).ok_or_else(|| Error::Config(format!("{path}: unknown field {k:?}")))?;
    }
    Err(Error::Config("empty override path".into()))
}

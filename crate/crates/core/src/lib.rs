//! Noise-constrained locomotion learning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`cost`]: contact-based noise cost and its normalisation to `[0, 1]`.
//! - [`env`]: a deterministic 1-D impact walker producing tracking reward and noise cost.
//! - [`nn`]: a small multilayer perceptron with exact backprop and Adam.
//! - [`agent`]: the constraint-conditioned Gaussian policy and value critics,
//!   including the feature/weight decomposed critic `V(s, ε) = ξ(s)ᵀ w(ε)`.
//! - [`trainer`]: PID-Lagrangian PPO over a schedule of constraint levels, plus the
//!   oracle training modes.
//! - [`pareto`]: dominance, fronts, 2-D hypervolume, sparsity and evaluation metrics.
//! - [`audio`]: WAV parsing, RMS and sound pressure level analysis.
//! - [`config`], [`checkpoint`], [`eval`], [`report`]: experiment plumbing.
//! - [`steer`]: a live control loop whose constraint level can be changed at runtime.

pub mod agent;
pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pareto;
pub mod report;
pub mod stats;
pub mod steer;
pub mod trainer;

pub use agent::{ConditioningMode, ConstraintLevel, CriticPair, PolicyParams, ValueKind};
pub use cost::{ContactSnapshot, CostConvention, CostParams};
pub use env::{Action, ContactModel, EnvParams, EnvState, Observation, Transition};
pub use error::{Error, Result};
pub use nn::{Activation, MlpSpec, ParamVector};
pub use pareto::{ParetoFront, RefPoint, SolutionPoint};
pub use trainer::{LagrangeState, TrainMode, TrainerConfig};

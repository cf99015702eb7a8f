//! Command-line entry points for training, evaluation, reporting, audio analysis
//! and the live steering server.

pub mod args;
pub mod commands;
pub mod protocol;
pub mod server;

/// Version string recorded in run manifests, e.g. `0.1.0+g1a2b3c4d5e6f`.
pub fn version_string() -> String {
    format!("{}+g{}", env!("CARGO_PKG_VERSION"), env!("QUIETGAIT_COMMIT"))
}

/// Default output directory when neither `--out` nor the environment sets one.
pub const DEFAULT_OUT: &str = "runs";
pub const OUT_ENV: &str = "QUIETGAIT_OUT";

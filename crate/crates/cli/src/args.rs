use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::{DEFAULT_OUT, OUT_ENV};

#[derive(Debug, Parser)]
#[command(name = "quietgait", version = env!("CARGO_PKG_VERSION"), about = "Noise-constrained locomotion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write checkpoint, metrics log and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint over the configured (ε, v_target, seed) grid.
    Eval(EvalArgs),
    /// Build hypervolume, sparsity and cost-violation tables from evaluation logs.
    Pareto(ParetoArgs),
    /// Report RMS and sound pressure level of WAV segments.
    Audio(AudioArgs),
    /// Run a checkpoint live and serve the steering API.
    Serve(ServeArgs),
    /// Print the default experiment configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigSource {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set trainer.iterations=50`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Training mode: cncp, conc, rc[:repeat], ppo, oracle_safe[:ε], oracle_morl:β.
    /// A bare `oracle_safe` trains one policy per evaluation level.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; each run gets its own subdirectory.
    #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT)]
    pub out: PathBuf,
    /// Suppress per-iteration progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: ConfigSource,
    /// Method name written to each record; defaults to the checkpoint's mode family.
    #[arg(long)]
    pub method: Option<String>,
    /// Output file for the records; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// Evaluation logs, one or more methods each.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Directory for report.json and the tables; stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AudioArgs {
    pub wav: PathBuf,
    /// Segment `START:END` in seconds; the whole clip when none is given.
    #[arg(long = "segment", value_name = "START:END", value_parser = parse_span)]
    pub segments: Vec<(f64, f64)>,
    /// Locomotion segment whose ambient-subtracted level is reported.
    #[arg(long, value_name = "START:END", value_parser = parse_span, requires = "ambient")]
    pub loco: Option<(f64, f64)>,
    /// Ambient-noise segment.
    #[arg(long, value_name = "START:END", value_parser = parse_span, requires = "loco")]
    pub ambient: Option<(f64, f64)>,
    /// Pascals per full-scale sample unit.
    #[arg(long, default_value_t = 1.0)]
    pub pa_per_unit: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Simulated ticks per second.
    #[arg(long, default_value_t = 50.0)]
    pub tick_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.5)]
    pub v_target: f64,
    /// Run as fast as possible instead of pacing ticks to wall-clock time.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub source: ConfigSource,
}

pub fn parse_span(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected START:END, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans() {
        assert_eq!(parse_span("0.5:2").unwrap(), (0.5, 2.0));
        assert!(parse_span("1").is_err());
        assert!(parse_span("a:1").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn train_flags() {
        let cli = Cli::try_parse_from(["quietgait", "train", "--mode", "conc", "--seed", "4", "--set", "trainer.iterations=3", "--out", "x"]).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.mode.as_deref(), Some("conc"));
        assert_eq!(t.seed, Some(4));
        assert_eq!(t.source.overrides, vec!["trainer.iterations=3"]);
        assert_eq!(t.out, PathBuf::from("x"));
    }
}

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use quietgait_core::audio::{self, Calibration};
use quietgait_core::checkpoint::Checkpoint;
use quietgait_core::config::ExperimentConfig;
use quietgait_core::eval::{self, EvalRecord};
use quietgait_core::report;
use quietgait_core::steer::{Controller, SteerConfig, SteerService};
use quietgait_core::trainer::{IterationMetrics, Trainer};
use quietgait_core::{Error, TrainMode};
use serde::{Deserialize, Serialize};

use crate::args::{AudioArgs, ConfigArgs, ConfigSource, EvalArgs, ParetoArgs, ServeArgs, TrainArgs};
use crate::server;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const CONFIG: &str = "config.toml";

/// Everything needed to rerun a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub iterations: usize,
    pub config: ExperimentConfig,
}

pub fn load_config(src: &ConfigSource) -> Result<ExperimentConfig> {
    let base = match &src.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.with_overrides(&src.overrides)?)
}

/// Run directory name, e.g. `oracle_safe_0.2-seed1`.
pub fn run_name(mode: TrainMode, seed: u64) -> String {
    format!("{}-seed{seed}", mode.label().replace(':', "_"))
}

pub fn train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = load_config(&args.source)?;
    if let Some(seed) = args.seed {
        cfg.trainer.seed = seed;
    }
    let modes = match args.mode.as_deref() {
        Some("oracle_safe") => cfg.eval.epsilons.iter().map(|&epsilon| TrainMode::OracleSafe { epsilon }).collect(),
        Some(m) => vec![TrainMode::parse(m)?],
        None => vec![cfg.agent.mode],
    };
    let mut dirs = Vec::new();
    for mode in modes {
        let mut run = cfg.clone();
        run.agent.mode = mode;
        run.validate()?;
        dirs.push(train_one(&run, &args.out, args.quiet)?);
    }
    Ok(dirs)
}

pub fn train_one(cfg: &ExperimentConfig, out_root: &Path, quiet: bool) -> Result<PathBuf> {
    let mode = cfg.agent.mode;
    let dir = out_root.join(run_name(mode, cfg.trainer.seed));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG), cfg.to_toml()?)?;

    let mut trainer = Trainer::new(mode, cfg.trainer.clone(), cfg.agent.dims.clone(), cfg.env.clone(), cfg.cost)?;
    let mut log = BufWriter::new(File::create(dir.join(METRICS))?);
    let total = cfg.trainer.iterations;
    trainer.run(|m: &IterationMetrics| {
        serde_json::to_writer(&mut log, m)?;
        log.write_all(b"\n")?;
        if !quiet && (m.iteration % 25 == 0 || m.iteration + 1 == total) {
            let cost = m.levels.iter().map(|l| l.mean_cost).sum::<f64>() / m.levels.len() as f64;
            log::info!("{} iter {}/{total} mean cost {cost:.3} mean lambda {:.3}", mode.label(), m.iteration + 1, m.mean_lambda());
        }
        Ok(())
    })?;
    log.flush()?;

    let ck = trainer.checkpoint();
    ck.save(dir.join(CHECKPOINT))?;
    let manifest = Manifest {
        version: crate::version_string(),
        mode: mode.label(),
        seed: cfg.trainer.seed,
        config_hash: cfg.hash()?,
        checkpoint_hash: ck.hash()?,
        iterations: trainer.iteration(),
        config: cfg.clone(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(dir)
}

pub fn evaluate(args: &EvalArgs) -> Result<Vec<EvalRecord>> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let cfg = load_config(&args.source)?;
    let recs = eval::evaluate(&ck, &cfg.eval, args.method.as_deref())?;
    match &args.out {
        Some(p) => eval::write_records(BufWriter::new(File::create(p)?), &recs)?,
        None => eval::write_records(std::io::stdout().lock(), &recs)?,
    }
    Ok(recs)
}

pub fn pareto(args: &ParetoArgs) -> Result<report::ParetoReport> {
    let mut records = Vec::new();
    for p in &args.logs {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        records.extend(eval::read_records(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?);
    }
    let rep = report::build_report(&records)?;
    let summary = rep.summary_table();
    let hv = rep.hypervolume_table();
    print!("{summary}\n{hv}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&rep)?)?;
        fs::write(dir.join("summary.tsv"), summary)?;
        fs::write(dir.join("hypervolume.tsv"), hv)?;
    }
    Ok(rep)
}

/// One line of `audio` output. `db` is the string `undefined` for silent segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioLine {
    pub kind: String,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms: Option<f64>,
    pub db: serde_json::Value,
}

fn db_value(db: Option<f64>) -> serde_json::Value {
    match db {
        Some(d) => serde_json::json!(d),
        None => serde_json::json!("undefined"),
    }
}

pub fn audio(args: &AudioArgs) -> Result<Vec<AudioLine>> {
    let clip = audio::read_wav(&args.wav).with_context(|| format!("reading {}", args.wav.display()))?;
    let cal = Calibration { pa_per_unit: args.pa_per_unit, ..Default::default() };
    let mut segments = args.segments.clone();
    if segments.is_empty() && args.loco.is_none() {
        segments.push((0.0, clip.duration()));
    }
    let mut lines = Vec::new();
    for &seg in &segments {
        let r = audio::segment_report(&clip, seg, cal)?;
        lines.push(AudioLine { kind: "segment".into(), start: r.start, end: r.end, rms: Some(r.rms), db: db_value(r.db) });
    }
    if let (Some(loco), Some(ambient)) = (args.loco, args.ambient) {
        let db = match audio::locomotion_spl(&clip, loco, ambient, cal) {
            Ok(d) => Some(d),
            Err(Error::UndefinedLevel(_)) => None,
            Err(e) => return Err(e.into()),
        };
        lines.push(AudioLine { kind: "locomotion".into(), start: loco.0, end: loco.1, rms: None, db: db_value(db) });
    }
    let mut out = std::io::stdout().lock();
    for l in &lines {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    Ok(lines)
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let config = SteerConfig { tick_rate_hz: args.tick_rate, initial_epsilon: args.epsilon, initial_v_target: args.v_target };
    let controller = Controller::new(ck, config)?;
    let realtime = !args.fast;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = match tokio::net::TcpListener::bind(args.bind).await {
            Ok(l) => l,
            Err(e) => bail!("cannot bind {}: {e}", args.bind),
        };
        let svc = Arc::new(SteerService::start(controller, realtime)?);
        server::serve(listener, svc).await
    })
}

pub fn print_config(args: &ConfigArgs) -> Result<()> {
    print!("{}", load_config(&args.source)?.to_toml()?);
    Ok(())
}

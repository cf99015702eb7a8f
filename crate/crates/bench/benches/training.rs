use criterion::{criterion_group, criterion_main, Criterion};
use quietgait_bench::small_trainer_config;
use quietgait_core::agent::AgentDims;
use quietgait_core::config::EvalConfig;
use quietgait_core::eval;
use quietgait_core::trainer::{TrainMode, Trainer};
use quietgait_core::{CostParams, EnvParams};

fn trainer() -> Trainer {
    Trainer::new(TrainMode::Cncp, small_trainer_config(), AgentDims::default(), EnvParams::default(), CostParams::default()).unwrap()
}

fn iteration(c: &mut Criterion) {
    let mut g = c.benchmark_group("trainer");
    g.sample_size(10);
    let mut t = trainer();
    g.bench_function("collect_16x64", |b| b.iter(|| t.collect_rollouts().unwrap()));
    let mut t = trainer();
    let buffers = t.collect_rollouts().unwrap();
    g.bench_function("optimise_16x64", |b| b.iter(|| t.train_iteration(&buffers).unwrap()));
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let ck = trainer().checkpoint();
    let grid = EvalConfig { seeds: 1, ..Default::default() };
    let mut g = c.benchmark_group("eval");
    g.sample_size(10);
    g.bench_function("grid_8x7", |b| b.iter(|| eval::evaluate(&ck, &grid, None).unwrap()));
    g.finish();
}

criterion_group!(benches, iteration, evaluation);
criterion_main!(benches);

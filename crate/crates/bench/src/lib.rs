//! Seeded fixtures shared by the benchmarks.

use ndarray::Array2;
use quietgait_core::pareto::SolutionPoint;
use quietgait_core::trainer::TrainerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// Points on a noisy convex trade-off curve, so most of them are non-dominated.
pub fn tradeoff_points(n: usize, seed: u64) -> Vec<SolutionPoint> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let c: f64 = r.random_range(0.0..1.0);
            SolutionPoint::new(c, (1.0 - c).powi(2) + r.random_range(0.0..0.05))
        })
        .collect()
}

/// One short iteration's worth of work at the default network size.
pub fn small_trainer_config() -> TrainerConfig {
    TrainerConfig { num_envs: 16, horizon: 64, iterations: 1, minibatch_size: 256, epochs_per_iter: 1, ..Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(uniform_matrix(3, 2, 1), uniform_matrix(3, 2, 1));
        assert_eq!(tradeoff_points(10, 4), tradeoff_points(10, 4));
        assert!(small_trainer_config().validate().is_ok());
    }
}

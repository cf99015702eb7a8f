//! Two-objective Pareto analysis over (normalised cost, tracking error), both minimised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionPoint {
    pub cost: f64,
    pub tracking_error: f64,
    #[serde(default)]
    pub tag: String,
}

impl SolutionPoint {
    pub fn new(cost: f64, tracking_error: f64) -> Self {
        Self { cost, tracking_error, tag: String::new() }
    }

    pub fn tagged(cost: f64, tracking_error: f64, tag: impl Into<String>) -> Self {
        Self { cost, tracking_error, tag: tag.into() }
    }
}

/// Non-dominated points sorted by ascending cost (and so descending error).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<SolutionPoint>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &SolutionPoint) -> bool {
        self.points.iter().any(|q| q.cost == p.cost && q.tracking_error == p.tracking_error)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefPoint {
    pub cost_ref: f64,
    pub err_ref: f64,
}

impl RefPoint {
    /// `(1, max observed error)` over every point being compared.
    pub fn shared<'a>(points: impl IntoIterator<Item = &'a SolutionPoint>) -> Self {
        let err_ref = points.into_iter().map(|p| p.tracking_error).fold(0.0, f64::max);
        Self { cost_ref: 1.0, err_ref }
    }
}

/// `p` is no worse in both objectives and strictly better in one.
pub fn dominates(p: &SolutionPoint, q: &SolutionPoint) -> bool {
    p.cost <= q.cost
        && p.tracking_error <= q.tracking_error
        && (p.cost < q.cost || p.tracking_error < q.tracking_error)
}

pub fn pareto_filter(points: &[SolutionPoint]) -> Result<ParetoFront> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    for p in points {
        if !(p.cost.is_finite() && p.tracking_error.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite solution point ({}, {})", p.cost, p.tracking_error)));
        }
    }
    // stable sort keeps the first of any exact duplicates in front
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p.cost.total_cmp(&q.cost).then(p.tracking_error.total_cmp(&q.tracking_error))
    });
    let mut front: Vec<SolutionPoint> = Vec::new();
    let mut best_err = f64::INFINITY;
    for i in order {
        let p = &points[i];
        if p.tracking_error < best_err {
            front.push(p.clone());
            best_err = p.tracking_error;
        }
    }
    Ok(ParetoFront { points: front })
}

/// Area dominated by `front` and bounded by `reference`.
///
/// Points that do not strictly dominate the reference in both coordinates add
/// nothing and are skipped.
pub fn hypervolume_2d(front: &ParetoFront, reference: RefPoint) -> Result<f64> {
    if !(reference.cost_ref.is_finite() && reference.err_ref.is_finite()) {
        return Err(Error::InvalidRef(format!("({}, {})", reference.cost_ref, reference.err_ref)));
    }
    let mut pts: Vec<(f64, f64)> = front
        .points
        .iter()
        .filter(|p| p.cost < reference.cost_ref && p.tracking_error < reference.err_ref)
        .map(|p| (p.cost, p.tracking_error))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut ceiling = reference.err_ref;
    // horizontal slabs: each new lower point adds a strip from its cost to the ref
    for &(c, e) in &pts {
        if e >= ceiling {
            continue;
        }
        area += (reference.cost_ref - c) * (ceiling - e);
        ceiling = e;
    }
    Ok(area)
}

/// Population standard deviation of the distances between cost-adjacent points.
pub fn sparsity(front: &ParetoFront) -> f64 {
    if front.len() <= 2 {
        return 0.0;
    }
    let mut pts: Vec<&SolutionPoint> = front.points.iter().collect();
    pts.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let gaps: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1].cost - w[0].cost).hypot(w[1].tracking_error - w[0].tracking_error))
        .collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean of `max(0, cost - ε)` over `(measured_cost, ε)` pairs.
pub fn avg_cost_violation(evals: &[(f64, f64)]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(evals.iter().map(|(c, e)| (c - e).max(0.0)).sum::<f64>() / evals.len() as f64)
}

/// Mean over rollouts of the mean absolute velocity error of each rollout.
pub fn avg_tracking_error(evals: &[(Vec<f64>, f64)]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (vs, target) in evals {
        if vs.is_empty() {
            return Err(Error::EmptyInput);
        }
        total += vs.iter().map(|v| (v - target).abs()).sum::<f64>() / vs.len() as f64;
    }
    Ok(total / evals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(xs: &[(f64, f64)]) -> Vec<SolutionPoint> {
        xs.iter().map(|&(c, e)| SolutionPoint::new(c, e)).collect()
    }

    fn brute_front(points: &[SolutionPoint]) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for p in points {
            if points.iter().any(|q| dominates(q, p)) {
                continue;
            }
            if !out.contains(&(p.cost, p.tracking_error)) {
                out.push((p.cost, p.tracking_error));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Counts cell centres of an `n × n` grid covered by at least one rectangle.
    fn grid_hv(points: &[(f64, f64)], r: RefPoint, n: usize) -> f64 {
        let (dx, dy) = (r.cost_ref / n as f64, r.err_ref / n as f64);
        let mut covered = 0usize;
        for i in 0..n {
            let x = (i as f64 + 0.5) * dx;
            for j in 0..n {
                let y = (j as f64 + 0.5) * dy;
                if points.iter().any(|&(c, e)| c <= x && e <= y) {
                    covered += 1;
                }
            }
        }
        covered as f64 * dx * dy
    }

    #[test]
    fn dominance_cases() {
        let p = SolutionPoint::new(0.1, 0.2);
        assert!(dominates(&p, &SolutionPoint::new(0.2, 0.3)));
        assert!(!dominates(&SolutionPoint::new(0.1, 0.3), &SolutionPoint::new(0.2, 0.2)));
        assert!(!dominates(&p, &p));
    }

    #[test]
    fn filter_cases() {
        let f = pareto_filter(&pts(&[(0.3, 0.3); 4])).unwrap();
        assert_eq!(f.len(), 1);
        let f = pareto_filter(&pts(&[(0.2, 0.6), (0.6, 0.2), (0.5, 0.5)])).unwrap();
        let got: Vec<(f64, f64)> = f.points.iter().map(|p| (p.cost, p.tracking_error)).collect();
        assert_eq!(got, vec![(0.2, 0.6), (0.5, 0.5), (0.6, 0.2)]);
        assert!(matches!(pareto_filter(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn duplicates_keep_first_tag() {
        let p = vec![SolutionPoint::tagged(0.1, 0.1, "a"), SolutionPoint::tagged(0.1, 0.1, "b")];
        let f = pareto_filter(&p).unwrap();
        assert_eq!(f.points.len(), 1);
        assert_eq!(f.points[0].tag, "a");
    }

    #[test]
    fn filter_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let n = rng.random_range(1..=15);
            // coarse grid so ties and duplicates happen
            let p: Vec<SolutionPoint> = (0..n)
                .map(|_| SolutionPoint::new(rng.random_range(0..6) as f64 / 5.0, rng.random_range(0..6) as f64 / 5.0))
                .collect();
            let f = pareto_filter(&p).unwrap();
            let got: Vec<(f64, f64)> = f.points.iter().map(|p| (p.cost, p.tracking_error)).collect();
            assert_eq!(got, brute_front(&p));
            assert!(f.points.windows(2).all(|w| w[0].cost < w[1].cost && w[0].tracking_error > w[1].tracking_error));
        }
    }

    #[test]
    fn hypervolume_hand_cases() {
        let unit = RefPoint { cost_ref: 1.0, err_ref: 1.0 };
        let f = pareto_filter(&pts(&[(0.0, 0.0)])).unwrap();
        assert_eq!(hypervolume_2d(&f, unit).unwrap(), 1.0);
        let f = pareto_filter(&pts(&[(0.2, 0.6), (0.6, 0.2)])).unwrap();
        assert_relative_eq!(hypervolume_2d(&f, unit).unwrap(), 0.48, max_relative = 1e-12);
        assert_relative_eq!(grid_hv(&[(0.2, 0.6), (0.6, 0.2)], unit, 1000), 0.48, epsilon = 1e-3);
    }

    #[test]
    fn points_beyond_ref_are_clipped() {
        let unit = RefPoint { cost_ref: 1.0, err_ref: 1.0 };
        let f = ParetoFront { points: pts(&[(1.2, 0.1), (0.5, 0.5)]) };
        assert_relative_eq!(hypervolume_2d(&f, unit).unwrap(), 0.25, max_relative = 1e-12);
        let bad = RefPoint { cost_ref: f64::NAN, err_ref: 1.0 };
        assert!(matches!(hypervolume_2d(&f, bad), Err(Error::InvalidRef(_))));
    }

    #[test]
    fn hypervolume_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = RefPoint { cost_ref: 1.0, err_ref: 1.0 };
        for _ in 0..200 {
            let n = rng.random_range(1..=10);
            let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
            let f = pareto_filter(&pts(&raw)).unwrap();
            let hv = hypervolume_2d(&f, r).unwrap();
            assert!((hv - grid_hv(&raw, r, 1000)).abs() < 1e-3);
        }
    }

    #[test]
    fn sparsity_cases() {
        let two = ParetoFront { points: pts(&[(0.0, 1.0), (1.0, 0.0)]) };
        assert_eq!(sparsity(&two), 0.0);
        let even = ParetoFront { points: pts(&[(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]) };
        assert!(sparsity(&even) < 1e-12);
        let gaps_1_3 = ParetoFront { points: pts(&[(0.0, 10.0), (1.0, 10.0), (4.0, 10.0)]) };
        assert_relative_eq!(sparsity(&gaps_1_3), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn violation_and_tracking() {
        assert_eq!(avg_cost_violation(&[(0.2, 0.3)]).unwrap(), 0.0);
        assert_relative_eq!(avg_cost_violation(&[(0.5, 0.3)]).unwrap(), 0.2, max_relative = 1e-12);
        assert!(avg_cost_violation(&[]).is_err());
        assert_eq!(avg_tracking_error(&[(vec![1.5; 10], 1.5)]).unwrap(), 0.0);
        assert_eq!(avg_tracking_error(&[(vec![1.0; 10], 1.5)]).unwrap(), 0.5);
        assert!(avg_tracking_error(&[]).is_err());
    }

    fn arb_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..12)
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(raw in arb_points()) {
            let f = pareto_filter(&pts(&raw)).unwrap();
            prop_assert_eq!(pareto_filter(&f.points).unwrap(), f);
        }

        #[test]
        fn dominated_insertion_is_inert(raw in arb_points(), dc in 0.0..0.5f64, de in 0.0..0.5f64) {
            let r = RefPoint { cost_ref: 1.0, err_ref: 1.0 };
            let mut p = pts(&raw);
            let f = pareto_filter(&p).unwrap();
            let base = &f.points[0];
            p.push(SolutionPoint::new(base.cost + dc + 1e-9, base.tracking_error + de));
            let g = pareto_filter(&p).unwrap();
            prop_assert_eq!(&g, &f);
            prop_assert_eq!(hypervolume_2d(&g, r).unwrap(), hypervolume_2d(&f, r).unwrap());
        }

        #[test]
        fn adding_points_never_shrinks_volume(raw in arb_points(), c in 0.0..1.0f64, e in 0.0..1.0f64) {
            let r = RefPoint { cost_ref: 1.0, err_ref: 1.0 };
            let mut p = pts(&raw);
            let before = hypervolume_2d(&pareto_filter(&p).unwrap(), r).unwrap();
            p.push(SolutionPoint::new(c, e));
            let after = hypervolume_2d(&pareto_filter(&p).unwrap(), r).unwrap();
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn scale_covariance(raw in arb_points(), k in 0.1..10.0f64) {
            let r = RefPoint { cost_ref: 1.0, err_ref: 1.0 };
            let f = pareto_filter(&pts(&raw)).unwrap();
            let scaled: Vec<(f64, f64)> = raw.iter().map(|&(c, e)| (c, e * k)).collect();
            let g = pareto_filter(&pts(&scaled)).unwrap();
            let rk = RefPoint { cost_ref: 1.0, err_ref: k };
            let (a, b) = (hypervolume_2d(&f, r).unwrap() * k, hypervolume_2d(&g, rk).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}

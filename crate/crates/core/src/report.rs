//! Method comparison tables built from evaluation records.
//!
//! For each commanded speed, a method's points are its `(mean_cost, tracking_error)`
//! pairs across constraint levels. Hypervolume and sparsity are computed per seed
//! and averaged; all methods share one reference point `(1, max observed error)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalRecord;
use crate::pareto::{self, ParetoFront, RefPoint, SolutionPoint};
use crate::stats::mean;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub avg_cost_violation: f64,
    pub avg_tracking_error: f64,
    pub mean_hypervolume: f64,
    pub mean_sparsity: f64,
    /// Points this method places on the joint fronts, summed over speeds.
    pub joint_front_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub hypervolume: f64,
    pub sparsity: f64,
    /// Front of the seed-averaged points, restricted to the reference box.
    pub front: Vec<SolutionPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityRow {
    pub v_target: f64,
    pub cells: Vec<Cell>,
    /// Front over every method's seed-averaged points, tagged by method.
    pub joint_front: Vec<SolutionPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub reference: RefPoint,
    pub methods: Vec<MethodSummary>,
    pub velocities: Vec<VelocityRow>,
}

fn key(x: f64) -> u64 {
    x.to_bits()
}

/// Front of `points` keeping only points strictly inside the reference box.
fn clipped_front(points: &[SolutionPoint], r: RefPoint) -> Result<ParetoFront> {
    let inside: Vec<SolutionPoint> =
        points.iter().filter(|p| p.cost < r.cost_ref && p.tracking_error < r.err_ref).cloned().collect();
    if inside.is_empty() {
        return Ok(ParetoFront::default());
    }
    pareto::pareto_filter(&inside)
}

pub fn build_report(records: &[EvalRecord]) -> Result<ParetoReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let points: Vec<SolutionPoint> =
        records.iter().map(|r| SolutionPoint::new(r.mean_cost, r.tracking_error)).collect();
    let reference = RefPoint::shared(&points);

    let mut methods: Vec<String> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut velocities: Vec<f64> = records.iter().map(|r| r.v_target).collect();
    velocities.sort_by(f64::total_cmp);
    velocities.dedup();

    let mut rows = Vec::new();
    let mut joint_counts: BTreeMap<String, usize> = BTreeMap::new();
    for &v in &velocities {
        let mut cells = Vec::new();
        let mut pooled = Vec::new();
        for m in &methods {
            let recs: Vec<&EvalRecord> = records.iter().filter(|r| &r.method == m && r.v_target == v).collect();
            if recs.is_empty() {
                continue;
            }
            let mut by_seed: BTreeMap<u64, Vec<SolutionPoint>> = BTreeMap::new();
            let mut by_eps: BTreeMap<u64, (f64, Vec<&EvalRecord>)> = BTreeMap::new();
            for r in &recs {
                by_seed.entry(r.seed).or_default().push(SolutionPoint::tagged(r.mean_cost, r.tracking_error, format!("{m} eps={}", r.epsilon)));
                by_eps.entry(key(r.epsilon)).or_insert((r.epsilon, Vec::new())).1.push(r);
            }
            let mut hvs = Vec::new();
            let mut sps = Vec::new();
            for pts in by_seed.values() {
                let f = clipped_front(pts, reference)?;
                hvs.push(pareto::hypervolume_2d(&f, reference)?);
                sps.push(pareto::sparsity(&f));
            }
            let averaged: Vec<SolutionPoint> = by_eps
                .values()
                .map(|(e, rs)| {
                    let c = mean(&rs.iter().map(|r| r.mean_cost).collect::<Vec<_>>());
                    let t = mean(&rs.iter().map(|r| r.tracking_error).collect::<Vec<_>>());
                    SolutionPoint::tagged(c, t, format!("{m} eps={e}"))
                })
                .collect();
            pooled.extend(averaged.iter().map(|p| SolutionPoint::tagged(p.cost, p.tracking_error, m.clone())));
            cells.push(Cell { method: m.clone(), hypervolume: mean(&hvs), sparsity: mean(&sps), front: clipped_front(&averaged, reference)?.points });
        }
        let joint = pareto::pareto_filter(&pooled)?.points;
        for p in &joint {
            *joint_counts.entry(p.tag.clone()).or_default() += 1;
        }
        rows.push(VelocityRow { v_target: v, cells, joint_front: joint });
    }

    let mut summaries = Vec::new();
    for m in &methods {
        let recs: Vec<&EvalRecord> = records.iter().filter(|r| &r.method == m).collect();
        let viol: Vec<(f64, f64)> = recs.iter().map(|r| (r.mean_cost, r.epsilon)).collect();
        let cells: Vec<&Cell> = rows.iter().flat_map(|r| r.cells.iter().filter(|c| &c.method == m)).collect();
        summaries.push(MethodSummary {
            method: m.clone(),
            avg_cost_violation: pareto::avg_cost_violation(&viol)?,
            avg_tracking_error: mean(&recs.iter().map(|r| r.tracking_error).collect::<Vec<_>>()),
            mean_hypervolume: mean(&cells.iter().map(|c| c.hypervolume).collect::<Vec<_>>()),
            mean_sparsity: mean(&cells.iter().map(|c| c.sparsity).collect::<Vec<_>>()),
            joint_front_points: joint_counts.get(m).copied().unwrap_or(0),
        });
    }
    Ok(ParetoReport { reference, methods: summaries, velocities: rows })
}

impl ParetoReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Velocity rows with hypervolume and sparsity columns per method, then averages.
    pub fn hypervolume_table(&self) -> String {
        let mut s = String::from("v_target");
        for m in &self.methods {
            let _ = write!(s, "\t{0}_hv\t{0}_sparsity", m.method);
        }
        s.push('\n');
        for row in &self.velocities {
            let _ = write!(s, "{}", row.v_target);
            for m in &self.methods {
                match row.cells.iter().find(|c| c.method == m.method) {
                    Some(c) => {
                        let _ = write!(s, "\t{:.6}\t{:.6}", c.hypervolume, c.sparsity);
                    }
                    None => s.push_str("\t-\t-"),
                }
            }
            s.push('\n');
        }
        s.push_str("average");
        for m in &self.methods {
            let _ = write!(s, "\t{:.6}\t{:.6}", m.mean_hypervolume, m.mean_sparsity);
        }
        s.push('\n');
        s
    }

    /// One row per method: cost violation and tracking error.
    pub fn summary_table(&self) -> String {
        let mut s = String::from("method\tavg_cost_violation\tavg_tracking_error\tjoint_front_points\n");
        for m in &self.methods {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{}", m.method, m.avg_cost_violation, m.avg_tracking_error, m.joint_front_points);
        }
        let _ = writeln!(s, "# reference\tcost={}\terror={}", self.reference.cost_ref, self.reference.err_ref);
        s
    }
}

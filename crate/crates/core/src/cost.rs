//! Contact-based locomotion noise cost.
//!
//! The cost sums an impact-force term and an impact-velocity term over the four
//! feet. Two sign conventions are supported: [`CostConvention::Literal`] evaluates
//! the exponentials exactly as commonly printed (decreasing in force and velocity),
//! while [`CostConvention::Monotone`] flips them so the cost grows with both, which
//! is what the normalised cost is defined on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FEET: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSnapshot {
    /// Per-foot contact force magnitude in newtons.
    pub forces: [f64; NUM_FEET],
    /// Per-foot impact speed in m/s.
    pub impact_velocities: [f64; NUM_FEET],
}

impl ContactSnapshot {
    pub fn zero() -> Self {
        Self { forces: [0.0; NUM_FEET], impact_velocities: [0.0; NUM_FEET] }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .forces
            .iter()
            .chain(self.impact_velocities.iter())
            .all(|x| x.is_finite() && *x >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("contact snapshot must be finite and non-negative: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConvention {
    Literal,
    #[default]
    Monotone,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Force scale (N).
    pub sigma_f: f64,
    /// Squared-velocity scale (m²/s²).
    pub sigma_v: f64,
    /// Force reference (N).
    pub f_max: f64,
    /// Impact-velocity cap used by the normalisation (m/s).
    pub v_clip: f64,
    pub convention: CostConvention,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            sigma_f: 50.0,
            sigma_v: 0.5,
            f_max: 100.0,
            v_clip: 2.0,
            convention: CostConvention::Monotone,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda1", self.lambda1, false),
            ("lambda2", self.lambda2, false),
            ("sigma_f", self.sigma_f, true),
            ("sigma_v", self.sigma_v, true),
            ("f_max", self.f_max, true),
            ("v_clip", self.v_clip, true),
        ];
        for (name, value, strict) in fields {
            let bad = !value.is_finite() || if strict { value <= 0.0 } else { value < 0.0 };
            if bad {
                return Err(Error::InvalidParams(format!("cost.{name} = {value}")));
            }
        }
        Ok(())
    }
}

/// Unnormalised noise cost of one contact snapshot.
pub fn raw_cost(snapshot: &ContactSnapshot, params: &CostParams) -> Result<f64> {
    params.validate()?;
    snapshot.validate()?;
    Ok(raw_cost_unchecked(snapshot, params))
}

fn raw_cost_unchecked(snapshot: &ContactSnapshot, p: &CostParams) -> f64 {
    let mut force_term = 0.0;
    let mut vel_term = 0.0;
    for i in 0..NUM_FEET {
        let f = snapshot.forces[i];
        let v2 = snapshot.impact_velocities[i] * snapshot.impact_velocities[i];
        match p.convention {
            CostConvention::Monotone => {
                force_term += ((f - p.f_max) / p.sigma_f).exp();
                vel_term += -(-v2 / p.sigma_v).exp_m1();
            }
            CostConvention::Literal => {
                force_term += ((p.f_max - f) / p.sigma_f).exp();
                vel_term += (-v2 / p.sigma_v).exp();
            }
        }
    }
    p.lambda1 * force_term + p.lambda2 * vel_term
}

/// Bounds `(raw_min, raw_max)` of the monotone raw cost over the clamped input box.
pub fn normalization_bounds(params: &CostParams) -> Result<(f64, f64)> {
    params.validate()?;
    let p = CostParams { convention: CostConvention::Monotone, ..*params };
    let lo = raw_cost_unchecked(&ContactSnapshot::zero(), &p);
    let hi = raw_cost_unchecked(
        &ContactSnapshot { forces: [p.f_max; NUM_FEET], impact_velocities: [p.v_clip; NUM_FEET] },
        &p,
    );
    if hi <= lo {
        return Err(Error::InvalidParams(format!("degenerate normalisation range [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

/// Noise cost min-max normalised to `[0, 1]` over the box `[0, f_max] × [0, v_clip]` per foot.
pub fn normalized_cost(snapshot: &ContactSnapshot, params: &CostParams) -> Result<f64> {
    if params.convention != CostConvention::Monotone {
        return Err(Error::InvalidParams("normalised cost requires the monotone convention".into()));
    }
    let (lo, hi) = normalization_bounds(params)?;
    snapshot.validate()?;
    Ok(normalize_with(snapshot, params, lo, hi))
}

/// Hot-path variant with precomputed bounds; inputs are assumed valid.
pub(crate) fn normalize_with(snapshot: &ContactSnapshot, params: &CostParams, lo: f64, hi: f64) -> f64 {
    let mut clamped = *snapshot;
    for i in 0..NUM_FEET {
        clamped.forces[i] = clamped.forces[i].clamp(0.0, params.f_max);
        clamped.impact_velocities[i] = clamped.impact_velocities[i].clamp(0.0, params.v_clip);
    }
    let raw = raw_cost_unchecked(&clamped, params);
    ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
}

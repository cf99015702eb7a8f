use serde::{Deserialize, Serialize};

use crate::agent::ConstraintLevel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 0.5, ki: 0.05, kd: 0.1, integral_max: 100.0 }
    }
}

/// Multiplier for one constraint level together with its PID memory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub gains: PidGains,
}

impl LagrangeState {
    pub fn new(gains: PidGains) -> Self {
        Self { lambda: 0.0, integral: 0.0, prev_error: 0.0, gains }
    }

    /// PID step on the violation `measured_cost - ε`, projected onto `λ >= 0`.
    pub fn update(&self, measured_cost: f64, eps: ConstraintLevel) -> Result<Self> {
        if !measured_cost.is_finite() {
            return Err(Error::NonFiniteCost(measured_cost));
        }
        let g = self.gains;
        let e = measured_cost - eps.value();
        let integral = (self.integral + e).clamp(0.0, g.integral_max);
        let derivative = e - self.prev_error;
        let lambda = (g.kp * e + g.ki * integral + g.kd * derivative).max(0.0);
        Ok(Self { lambda, integral, prev_error: e, gains: g })
    }
}

pub fn update_lagrange(state: &LagrangeState, measured_cost: f64, eps: ConstraintLevel) -> Result<LagrangeState> {
    state.update(measured_cost, eps)
}

/// `(A_r - λ A_c) / (1 + λ)`.
pub fn combined_advantage(a_r: f64, a_c: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::NegativeLambda(lambda));
    }
    if lambda.is_infinite() {
        return Ok(-a_c);
    }
    Ok((a_r - lambda * a_c) / (1.0 + lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn eps(e: f64) -> ConstraintLevel {
        ConstraintLevel::new(e).unwrap()
    }

    #[test]
    fn hand_case_fresh_state() {
        let s = LagrangeState::new(PidGains::default()).update(0.2, eps(0.0)).unwrap();
        assert_relative_eq!(s.lambda, 0.13, max_relative = 1e-12);
        assert_eq!(s.prev_error, 0.2);
        assert_eq!(s.integral, 0.2);
    }

    #[test]
    fn persistent_violation_increases_lambda() {
        // the first update carries a derivative kick of kd·e from the zero initial
        // error, so growth is strict once that has passed
        let first = LagrangeState::new(PidGains::default()).update(0.4, eps(0.3)).unwrap();
        let mut s = first.update(0.4, eps(0.3)).unwrap();
        assert!(s.lambda < first.lambda);
        let mut prev = s.lambda;
        for _ in 0..50 {
            s = s.update(0.4, eps(0.3)).unwrap();
            assert!(s.lambda > prev);
            prev = s.lambda;
        }
    }

    #[test]
    fn negative_error_projects_to_zero() {
        let s = LagrangeState::new(PidGains::default()).update(0.0, eps(1.0)).unwrap();
        assert_eq!(s.lambda, 0.0);
        assert_eq!(s.integral, 0.0);
    }

    #[test]
    fn integral_is_clamped() {
        let mut s = LagrangeState::new(PidGains::default());
        for _ in 0..500 {
            s = s.update(1.0, eps(0.0)).unwrap();
        }
        assert_eq!(s.integral, 100.0);
    }

    #[test]
    fn non_finite_cost_rejected() {
        let s = LagrangeState::new(PidGains::default());
        assert!(matches!(s.update(f64::NAN, eps(0.1)), Err(Error::NonFiniteCost(_))));
    }

    #[test]
    fn combined_advantage_cases() {
        assert_eq!(combined_advantage(1.7, 9.0, 0.0).unwrap(), 1.7);
        assert_eq!(combined_advantage(2.0, 1.0, 1.0).unwrap(), 0.5);
        assert_relative_eq!(combined_advantage(2.0, 1.0, 1e12).unwrap(), -1.0, epsilon = 1e-9);
        assert_eq!(combined_advantage(2.0, 1.0, f64::INFINITY).unwrap(), -1.0);
        assert!(matches!(combined_advantage(1.0, 1.0, -0.1), Err(Error::NegativeLambda(_))));
    }

    proptest! {
        #[test]
        fn lambda_never_negative(costs in prop::collection::vec(0.0..1.0f64, 1..60), e in 0.0..1.0f64) {
            let mut s = LagrangeState::new(PidGains::default());
            for c in costs {
                s = s.update(c, eps(e)).unwrap();
                prop_assert!(s.lambda >= 0.0);
                prop_assert!((0.0..=100.0).contains(&s.integral));
            }
        }

        #[test]
        fn combined_nonincreasing_in_cost_advantage(a_r in -5.0..5.0f64, a_c in -5.0..5.0f64, d in 0.0..5.0f64, l in 1e-6..10.0f64) {
            prop_assert!(combined_advantage(a_r, a_c + d, l).unwrap() <= combined_advantage(a_r, a_c, l).unwrap());
        }
    }
}

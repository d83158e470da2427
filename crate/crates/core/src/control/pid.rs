use serde::{Deserialize, Serialize};

use crate::error::{AncError, Result};

/// Parallel-form gains. `output_limit` clamps the output and, divided by
/// `ki`, the integral accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_limit: f64,
    pub dt_s: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64, output_limit: f64, dt_s: f64) -> Result<Self> {
        let g = Self {
            kp,
            ki,
            kd,
            output_limit,
            dt_s,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(AncError::invalid(format!("PID dt must be positive, got {}", self.dt_s)));
        }
        if !(self.output_limit > 0.0) {
            return Err(AncError::invalid(format!(
                "PID output limit must be positive, got {}",
                self.output_limit
            )));
        }
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err(AncError::invalid("PID gains must be finite"));
        }
        Ok(())
    }

    fn integral_limit(&self) -> Option<f64> {
        (self.ki > 0.0).then(|| self.output_limit / self.ki)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub previous_error: Option<f64>,
}

/// One controller update. The integral uses backward Euler, the derivative a
/// backward difference (zero on the first step).
pub fn pid_step(gains: &PidGains, state: &PidState, error: f64) -> Result<(f64, PidState)> {
    if !error.is_finite() {
        return Err(AncError::Degenerate(format!("PID error input is not finite ({error})")));
    }
    let mut integral = state.integral + error * gains.dt_s;
    if let Some(lim) = gains.integral_limit() {
        integral = integral.clamp(-lim, lim);
    }
    let derivative = state.previous_error.map_or(0.0, |p| (error - p) / gains.dt_s);
    let raw = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    let output = raw.clamp(-gains.output_limit, gains.output_limit);
    Ok((
        output,
        PidState {
            integral,
            previous_error: Some(error),
        },
    ))
}

/// Gains and state bundled for use inside a loop.
#[derive(Debug, Clone)]
pub struct Pid {
    gains: PidGains,
    state: PidState,
    last_output: f64,
}

impl Pid {
    pub fn new(gains: PidGains) -> Result<Self> {
        gains.validate()?;
        Ok(Self {
            gains,
            state: PidState::default(),
            last_output: 0.0,
        })
    }

    pub fn step(&mut self, error: f64) -> Result<f64> {
        let (out, state) = pid_step(&self.gains, &self.state, error)?;
        self.state = state;
        self.last_output = out;
        Ok(out)
    }

    pub fn state(&self) -> &PidState {
        &self.state
    }

    pub fn gains(&self) -> &PidGains {
        &self.gains
    }

    /// True when the last output sat on the clamp.
    pub fn at_limit(&self) -> bool {
        self.last_output.abs() >= self.gains.output_limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proportional_only() {
        let g = PidGains::new(2.0, 0.0, 0.0, 100.0, 0.001).unwrap();
        let (u, _) = pid_step(&g, &PidState::default(), 3.0).unwrap();
        assert_eq!(u, 6.0);
    }

    #[test]
    fn pure_integrator_ramps_then_clamps() {
        let g = PidGains::new(0.0, 1.0, 0.0, 0.5, 0.001).unwrap();
        let mut pid = Pid::new(g).unwrap();
        for n in 1..=400 {
            let u = pid.step(1.0).unwrap();
            assert!((u - n as f64 * 0.001).abs() < 1e-12);
        }
        for _ in 0..1000 {
            pid.step(1.0).unwrap();
        }
        assert_eq!(pid.step(1.0).unwrap(), 0.5);
        assert!(pid.state().integral <= 0.5 + 1e-12);
        assert!(pid.at_limit());
    }

    #[test]
    fn derivative_is_backward_difference() {
        let g = PidGains::new(0.0, 0.0, 0.5, 100.0, 0.01).unwrap();
        let (u0, s) = pid_step(&g, &PidState::default(), 1.0).unwrap();
        assert_eq!(u0, 0.0);
        let (u1, _) = pid_step(&g, &s, 1.2).unwrap();
        assert!((u1 - 0.5 * 0.2 / 0.01).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_error_and_bad_gains() {
        let g = PidGains::new(1.0, 1.0, 0.0, 1.0, 0.001).unwrap();
        assert!(pid_step(&g, &PidState::default(), f64::NAN).is_err());
        assert!(PidGains::new(1.0, 1.0, 0.0, 0.0, 0.001).is_err());
        assert!(PidGains::new(1.0, 1.0, 0.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn step_is_a_pure_function(
            kp in -5.0f64..5.0, ki in 0.0f64..5.0, kd in -1.0f64..1.0,
            integral in -10.0f64..10.0, prev in proptest::option::of(-10.0f64..10.0), e in -100.0f64..100.0,
        ) {
            let g = PidGains::new(kp, ki, kd, 50.0, 1e-3).unwrap();
            let s = PidState { integral, previous_error: prev };
            prop_assert_eq!(pid_step(&g, &s, e).unwrap(), pid_step(&g, &s, e).unwrap());
        }

        #[test]
        fn integral_never_exceeds_clamp(
            ki in 0.1f64..10.0, limit in 0.1f64..10.0,
            errors in prop::collection::vec(-1e3f64..1e3, 1..200),
        ) {
            let g = PidGains::new(1.0, ki, 0.0, limit, 1e-2).unwrap();
            let mut s = PidState::default();
            for e in errors {
                let (u, next) = pid_step(&g, &s, e).unwrap();
                prop_assert!(u.abs() <= limit);
                prop_assert!(next.integral.abs() <= limit / ki * (1.0 + 1e-12));
                s = next;
            }
        }
    }
}

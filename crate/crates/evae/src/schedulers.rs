//! Baseline beta schedules: constant, sigmoid cost annealing, cyclical
//! annealing, and PID set-point control.
//!
//! Constant, cost and cyclical schedules are pure functions of the iteration
//! counter. The PID schedule is driven by the observed KL: the error
//! `e = c - KL` feeds a positional controller whose output moves beta
//! opposite to the error (raising beta suppresses KL), with conditional
//! integration as anti-windup while the output is clamped.

use crate::error::{EvaeError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleState {
    Constant {
        beta: f64,
    },
    Cost {
        /// Iterations over which the weight ramps from ~0 to ~1.
        horizon: u64,
        /// Peak beta multiplying the sigmoid weight.
        target: f64,
        t: u64,
    },
    Cyclical {
        /// Total iterations the cycles divide.
        horizon: u64,
        cycles: u64,
        /// Fraction of each cycle spent ramping linearly 0 -> 1.
        ramp_fraction: f64,
        target: f64,
        t: u64,
    },
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        set_point: f64,
        beta_base: f64,
        beta_max: f64,
        integral: f64,
        prev_error: Option<f64>,
        beta: f64,
        t: u64,
    },
}

impl ScheduleState {
    pub fn constant(beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(EvaeError::Config(format!(
                "constant beta must be >= 0, got {beta}"
            )));
        }
        Ok(ScheduleState::Constant { beta })
    }

    pub fn cost(horizon: u64, target: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(EvaeError::Config(
                "cost annealing horizon must be positive".into(),
            ));
        }
        Ok(ScheduleState::Cost {
            horizon,
            target,
            t: 0,
        })
    }

    pub fn cyclical(horizon: u64, cycles: u64, ramp_fraction: f64, target: f64) -> Result<Self> {
        if cycles == 0 || horizon == 0 {
            return Err(EvaeError::Config(
                "cyclical schedule needs cycles >= 1 and horizon >= 1".into(),
            ));
        }
        if !(0.0 < ramp_fraction && ramp_fraction <= 1.0) {
            return Err(EvaeError::Config("ramp fraction must lie in (0, 1]".into()));
        }
        Ok(ScheduleState::Cyclical {
            horizon,
            cycles,
            ramp_fraction,
            target,
            t: 0,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn pid(
        kp: f64,
        ki: f64,
        kd: f64,
        set_point: f64,
        beta_base: f64,
        beta_max: f64,
    ) -> Result<Self> {
        if !(set_point > 0.0) {
            return Err(EvaeError::Config("pid set point must be positive".into()));
        }
        if !(beta_max > 0.0) {
            return Err(EvaeError::Config("pid beta_max must be positive".into()));
        }
        Ok(ScheduleState::Pid {
            kp,
            ki,
            kd,
            set_point,
            beta_base,
            beta_max,
            integral: 0.0,
            prev_error: None,
            beta: beta_base.clamp(0.0, beta_max),
            t: 0,
        })
    }

    /// The beta this schedule currently emits (without advancing).
    pub fn current_beta(&self) -> f64 {
        match self {
            ScheduleState::Constant { beta } => *beta,
            ScheduleState::Cost { horizon, target, t } => target * cost_weight(*t, *horizon),
            ScheduleState::Cyclical {
                horizon,
                cycles,
                ramp_fraction,
                target,
                t,
            } => target * cyclical_weight(*t, *horizon, *cycles, *ramp_fraction),
            ScheduleState::Pid { beta, .. } => *beta,
        }
    }

    /// Advance one iteration. Pure schedules only need the counter;
    /// the PID consumes the KL observed at the previous step.
    pub fn step(&mut self, kl_observed: Option<f64>) -> Result<f64> {
        let beta_now = self.current_beta();
        match self {
            ScheduleState::Constant { beta } => Ok(*beta),
            ScheduleState::Cost { t, .. } | ScheduleState::Cyclical { t, .. } => {
                *t = t.saturating_add(1);
                Ok(beta_now)
            }
            ScheduleState::Pid {
                kp,
                ki,
                kd,
                set_point,
                beta_base,
                beta_max,
                integral,
                prev_error,
                beta,
                t,
            } => {
                let Some(kl) = kl_observed else {
                    *t += 1;
                    return Ok(*beta);
                };
                if !kl.is_finite() {
                    return Err(EvaeError::Numeric("pid fed non-finite KL".into()));
                }
                let error = *set_point - kl;
                let derivative = prev_error.map_or(0.0, |p| error - p);
                let candidate_integral = *integral + error;
                let raw = *beta_base - (*kp * error + *ki * candidate_integral + *kd * derivative);
                let clamped = raw.clamp(0.0, *beta_max);
                // Anti-windup: only keep the accumulated error when the
                // output is not saturated.
                if raw == clamped {
                    *integral = candidate_integral;
                }
                *prev_error = Some(error);
                *beta = clamped;
                *t += 1;
                Ok(*beta)
            }
        }
    }

    /// The PID error term from the last step, when applicable.
    pub fn last_error(&self) -> Option<f64> {
        match self {
            ScheduleState::Pid { prev_error, .. } => *prev_error,
            _ => None,
        }
    }
}

/// Sigmoid weight rising to 0.5 exactly at the midpoint, with
/// `w(0) <= 0.01` and `w(T) >= 0.99`: `logistic(k * (t - T/2))` where
/// `k = 2 ln(99) / T`, widened by one part in 1e9 so the endpoint
/// inequalities hold strictly in floating point.
pub fn cost_weight(t: u64, horizon: u64) -> f64 {
    let half = horizon as f64 / 2.0;
    let k = 2.0 * 99.0f64.ln() / horizon as f64 * (1.0 + 1e-9);
    let x = k * (t as f64 - half);
    1.0 / (1.0 + (-x).exp())
}

/// Cyclical weight: within each cycle of length `horizon / cycles`, ramps
/// linearly 0 -> 1 over the first `ramp_fraction`, then holds at 1.
pub fn cyclical_weight(t: u64, horizon: u64, cycles: u64, ramp_fraction: f64) -> f64 {
    let cycle_len = horizon as f64 / cycles as f64;
    let pos = (t as f64) % cycle_len;
    let ramp_len = ramp_fraction * cycle_len;
    if pos >= ramp_len {
        1.0
    } else {
        pos / ramp_len
    }
}

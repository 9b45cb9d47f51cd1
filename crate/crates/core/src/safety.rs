//! Supervisory input saturation for the Joule-heated muscle, and the PI
//! motor-babbling controller used to collect training data.
//!
//! Under the affine thermal model `T' = a1·T + a2·u + a3` the supervisor
//! clips the nominal input to `γ·u*(T)`, where `u*` would land exactly on
//! the adjusted limit. Any non-negative nominal sequence then keeps
//! `T ≤ T_max` whenever it starts there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// `(1/γ − a1·(1−γ)/γ)·T_max − a3·(1−γ)/γ`.
pub fn adjusted_max_temp(t_max: f64, gamma: f64, a1: f64, a3: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(domain(format!("discount γ must lie in (0, 1], got {gamma}")));
    }
    let k = (1.0 - gamma) / gamma;
    Ok((1.0 / gamma - a1 * k) * t_max - a3 * k)
}

/// Thermal model plus the temperature ceiling it must respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyParams {
    a1: f64,
    a2: f64,
    a3: f64,
    t_max: f64,
    gamma: f64,
    t_max_adj: f64,
}

impl SafetyParams {
    pub fn new(a1: f64, a2: f64, a3: f64, t_max: f64, gamma: f64) -> Result<Self> {
        if !(a2 > 0.0) {
            return Err(domain(format!("input gain a2 must be positive, got {a2}")));
        }
        let t_max_adj = adjusted_max_temp(t_max, gamma, a1, a3)?;
        Ok(SafetyParams { a1, a2, a3, t_max, gamma, t_max_adj })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t_max_adj(&self) -> f64 {
        self.t_max_adj
    }
}

/// `u*(T) = (T_max_adj − a1·T − a3) / a2`. Negative when `T` is already hot.
pub fn saturation_limit(temp: f64, p: &SafetyParams) -> f64 {
    (p.t_max_adj - p.a1 * temp - p.a3) / p.a2
}

/// `max(0, min(u_nom, γ·u*))`.
pub fn apply_supervisor(u_nom: f64, temp: f64, p: &SafetyParams) -> f64 {
    u_nom.min(p.gamma * saturation_limit(temp, p)).max(0.0)
}

/// PI gains and output limits for motor babbling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BabblerGains {
    /// V/rad
    pub kp: f64,
    /// V/(rad·s)
    pub ki: f64,
    /// Minimum commanded voltage; keeps sense current flowing.
    pub u_floor: f64,
    pub u_ceil: f64,
}

impl Default for BabblerGains {
    fn default() -> Self {
        BabblerGains { kp: 20.0, ki: 1.0, u_floor: 0.5, u_ceil: 9.0 }
    }
}

/// One setpoint and how many ticks to hold it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hold {
    pub theta_rad: f64,
    pub ticks: usize,
}

/// `n` setpoints drawn uniformly from `[theta_lo, theta_hi]`.
pub fn random_setpoint_schedule(
    n: usize,
    theta_lo: f64,
    theta_hi: f64,
    hold_ticks: usize,
    seed: u64,
) -> Result<Vec<Hold>> {
    if !(theta_lo < theta_hi) {
        return Err(domain(format!(
            "setpoint bounds must satisfy lo < hi, got [{theta_lo}, {theta_hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| Hold { theta_rad: rng.random_range(theta_lo..=theta_hi), ticks: hold_ticks })
        .collect())
}

/// PI setpoint tracker stepping through a hold schedule.
///
/// Once the schedule is exhausted the last setpoint is held indefinitely.
#[derive(Debug, Clone, PartialEq)]
pub struct Babbler {
    gains: BabblerGains,
    schedule: Vec<Hold>,
    position: usize,
    ticks_in_hold: usize,
    integral: f64,
}

impl Babbler {
    pub fn new(gains: BabblerGains, schedule: Vec<Hold>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(domain("babbling schedule is empty"));
        }
        if !(gains.ki > 0.0 && gains.kp >= 0.0 && gains.u_floor <= gains.u_ceil) {
            return Err(domain(format!("invalid babbler gains {gains:?}")));
        }
        Ok(Babbler { gains, schedule, position: 0, ticks_in_hold: 0, integral: 0.0 })
    }

    /// Holds one setpoint forever.
    pub fn constant(gains: BabblerGains, theta_rad: f64) -> Result<Self> {
        Babbler::new(gains, vec![Hold { theta_rad, ticks: usize::MAX }])
    }

    pub fn setpoint(&self) -> f64 {
        self.schedule[self.position].theta_rad
    }

    /// Replace the schedule with a single indefinite hold; the integral state
    /// is kept so the output does not jump.
    pub fn set_setpoint(&mut self, theta_rad: f64) {
        self.schedule = vec![Hold { theta_rad, ticks: usize::MAX }];
        self.position = 0;
        self.ticks_in_hold = 0;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn integral_limit(&self) -> f64 {
        self.gains.u_ceil / self.gains.ki
    }

    /// Index of the active hold in the schedule.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Ticks already spent in the active hold, before this step.
    pub fn ticks_in_hold(&self) -> usize {
        self.ticks_in_hold
    }

    pub fn finished(&self) -> bool {
        self.position + 1 == self.schedule.len()
            && self.ticks_in_hold >= self.schedule[self.position].ticks
    }

    /// Nominal voltage for this tick given the measured bend angle.
    pub fn step(&mut self, theta_meas: f64, dt: f64) -> f64 {
        let err = self.setpoint() - theta_meas;
        self.integral = (self.integral + err * dt).clamp(0.0, self.integral_limit());
        let u = (self.gains.kp * err + self.gains.ki * self.integral)
            .clamp(self.gains.u_floor, self.gains.u_ceil);
        self.ticks_in_hold += 1;
        if self.ticks_in_hold >= self.schedule[self.position].ticks
            && self.position + 1 < self.schedule.len()
        {
            self.position += 1;
            self.ticks_in_hold = 0;
        }
        u
    }
}

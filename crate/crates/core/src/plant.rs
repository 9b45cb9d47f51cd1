//! Phenomenological SMA-actuated limb: affine thermal dynamics, cosine
//! phase kinetics with reversal-point minor loops, phase-dependent
//! resistance, beam statics against an optional plate, and noisy sensing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beam::{self, LimbParams};
use crate::error::{domain, Result};
use crate::safety::{self, Babbler, BabblerGains, Hold, SafetyParams};

/// Temperature at which the resistance model is referenced, °C.
pub const RESISTANCE_REF_TEMP: f64 = 22.0;

/// Measurement noise is drawn from a normal truncated at this many σ.
pub const NOISE_CLIP_SIGMAS: f64 = 3.0;

/// Constants of the simulated limb. Temperatures in °C, resistances in Ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub a1: f64,
    /// °C/V
    pub a2: f64,
    /// °C
    pub a3: f64,
    pub austenite_start: f64,
    pub austenite_finish: f64,
    pub martensite_start: f64,
    pub martensite_finish: f64,
    pub r_martensite: f64,
    pub r_austenite: f64,
    /// Ω/°C
    pub beta_t: f64,
    /// Muscle force at full austenite and A_f, N.
    pub f_max: f64,
    /// Rise in recovery force per °C above A_f, N/°C.
    pub stress_rate: f64,
    pub limb: LimbParams,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub sigma_theta: f64,
    /// Sense-current floor, A.
    pub i_min: f64,
    pub ambient: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            a1: 0.99,
            // 9 V held indefinitely settles at 160 °C.
            a2: (1.6 - 0.22) / 9.0,
            a3: 0.22,
            austenite_start: 75.0,
            austenite_finish: 95.0,
            martensite_start: 70.0,
            martensite_finish: 50.0,
            // Strong positive coefficient: past A_f the drop from the phase
            // change is spent and R climbs back through values already seen
            // inside the band.
            r_martensite: 2.2,
            r_austenite: 0.3,
            beta_t: 0.02,
            f_max: 2.2,
            stress_rate: 0.04,
            limb: LimbParams::prototype(),
            sigma_t: 0.5,
            sigma_r: 0.01,
            sigma_theta: 0.2f64.to_radians(),
            i_min: 0.2,
            ambient: 22.0,
        }
    }
}

impl PlantParams {
    /// Defaults with every noise source switched off.
    pub fn noiseless() -> Self {
        PlantParams { sigma_t: 0.0, sigma_r: 0.0, sigma_theta: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a1 < 1.0) {
            return Err(domain(format!("thermal pole a1 must lie in (0, 1), got {}", self.a1)));
        }
        if !(self.a2 > 0.0) {
            return Err(domain(format!("input gain a2 must be positive, got {}", self.a2)));
        }
        if !(self.martensite_finish < self.martensite_start
            && self.martensite_start <= self.austenite_start
            && self.austenite_start < self.austenite_finish)
        {
            return Err(domain("transition temperatures must satisfy M_f < M_s ≤ A_s < A_f"));
        }
        if !(self.r_martensite > self.r_austenite && self.r_austenite > 0.0) {
            return Err(domain("resistances must satisfy R_M > R_A > 0"));
        }
        if !(self.f_max > 0.0 && self.f_max <= self.limb.max_reachable_force()) {
            return Err(domain(format!(
                "F_max {} N must lie in (0, {}] for this limb",
                self.f_max,
                self.limb.max_reachable_force()
            )));
        }
        if !(self.stress_rate >= 0.0) {
            return Err(domain(format!("stress rate must be non-negative, got {}", self.stress_rate)));
        }
        if [self.sigma_t, self.sigma_r, self.sigma_theta].iter().any(|s| !(*s >= 0.0)) {
            return Err(domain("noise standard deviations must be non-negative"));
        }
        if !(self.i_min >= 0.0) {
            return Err(domain("current floor must be non-negative"));
        }
        Ok(())
    }

    /// Equilibrium temperature under zero input.
    pub fn rest_temperature(&self) -> f64 {
        self.a3 / (1.0 - self.a1)
    }

    pub fn safety(&self, t_max: f64, gamma: f64) -> Result<SafetyParams> {
        SafetyParams::new(self.a1, self.a2, self.a3, t_max, gamma)
    }
}

/// `a1·T + a2·u + a3`.
pub fn thermal_step(temp: f64, u: f64, params: &PlantParams) -> f64 {
    params.a1 * temp + params.a2 * u + params.a3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Heating,
    Cooling,
}

/// Austenite fraction together with the reversal point it was last
/// anchored at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub xi: f64,
    pub xi_rev: f64,
    pub temp_rev: f64,
    pub direction: Direction,
}

impl PhaseState {
    /// Fully martensitic at `temp`, last moving toward cold.
    pub fn martensite(temp: f64) -> Self {
        PhaseState { xi: 0.0, xi_rev: 0.0, temp_rev: temp, direction: Direction::Cooling }
    }
}

fn cosine_ramp(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * x).cos())
    }
}

/// Major-loop progress of the martensite → austenite transformation.
fn heating_progress(temp: f64, p: &PlantParams) -> f64 {
    cosine_ramp((temp - p.austenite_start) / (p.austenite_finish - p.austenite_start))
}

/// Major-loop progress of the austenite → martensite transformation.
fn cooling_progress(temp: f64, p: &PlantParams) -> f64 {
    cosine_ramp((p.martensite_start - temp) / (p.martensite_start - p.martensite_finish))
}

/// Advance the phase fraction from temperature `temp` to `temp_next`.
///
/// Each branch starts from the state at the last reversal and is scaled so
/// it passes through `(temp_rev, xi_rev)` and completes at `A_f` (heating)
/// or `M_f` (cooling). Outside the bands the fraction is frozen.
pub fn phase_update(state: &PhaseState, temp: f64, temp_next: f64, p: &PlantParams) -> PhaseState {
    let direction = if temp_next > temp {
        Direction::Heating
    } else if temp_next < temp {
        Direction::Cooling
    } else {
        return *state;
    };
    let mut next = *state;
    if direction != state.direction {
        next.direction = direction;
        next.xi_rev = state.xi;
        next.temp_rev = temp;
    }
    let xi = match direction {
        Direction::Heating => {
            let g0 = heating_progress(next.temp_rev, p);
            if g0 >= 1.0 {
                state.xi
            } else {
                let g = heating_progress(temp_next, p);
                let target = next.xi_rev + (1.0 - next.xi_rev) * ((g - g0) / (1.0 - g0)).max(0.0);
                target.max(state.xi)
            }
        }
        Direction::Cooling => {
            let h0 = cooling_progress(next.temp_rev, p);
            if h0 >= 1.0 {
                state.xi
            } else {
                let h = cooling_progress(temp_next, p);
                let target = next.xi_rev * (1.0 - ((h - h0) / (1.0 - h0)).max(0.0));
                target.min(state.xi)
            }
        }
    };
    next.xi = xi.clamp(0.0, 1.0);
    next
}

/// `(1−ξ)·R_M + ξ·R_A + β_T·(T − 22)`.
/// Muscle force: proportional to the austenite fraction, stiffening above A_f,
/// never beyond what the limb can balance.
pub fn muscle_force(temp: f64, xi: f64, p: &PlantParams) -> f64 {
    let full = p.f_max + p.stress_rate * (temp - p.austenite_finish).max(0.0);
    xi * full.min(p.limb.max_reachable_force())
}

pub fn resistance_model(temp: f64, xi: f64, p: &PlantParams) -> f64 {
    (1.0 - xi) * p.r_martensite + xi * p.r_austenite + p.beta_t * (temp - RESISTANCE_REF_TEMP)
}

/// One logged timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleFrame {
    pub k: u64,
    pub t_s: f64,
    pub voltage: f64,
    pub current: f64,
    pub resistance: f64,
    pub temperature: f64,
    pub theta: f64,
    pub f_ext: f64,
    pub contact: bool,
}

/// Full hidden state of the simulated limb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub temperature: f64,
    pub phase: PhaseState,
    pub theta: f64,
    pub tip_displacement: f64,
    pub f_sma: f64,
    /// Plate reaction plus any transmitted human load.
    pub f_ext: f64,
    pub r_true: f64,
    pub in_contact: bool,
}

/// Pose of the limb under the muscle force, a plate and a tip push.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadedStatics {
    pub theta: f64,
    pub tip_displacement: f64,
    pub plate_force: f64,
    /// Part of the commanded push actually carried; less than commanded
    /// only when the push flattens the limb.
    pub human_force: f64,
}

/// Static equilibrium with a tip push of `human_force` acting through
/// compliance `human_compliance` (mm/N), then the plate constraint.
///
/// With no push this reduces exactly to [`beam::contact_statics`].
pub fn loaded_statics(
    f_sma: f64,
    plate_dist: Option<f64>,
    human_force: f64,
    human_compliance: f64,
    limb: &LimbParams,
) -> Result<LoadedStatics> {
    if human_force <= 0.0 {
        let sol = match plate_dist {
            Some(d) => beam::contact_statics(f_sma, d, limb)?,
            None => beam::ContactSolution {
                theta: beam::angle_from_force(f_sma, limb.zeta())?,
                tip_displacement: limb.length() / limb.zeta() * f_sma,
                external_force: 0.0,
            },
        };
        return Ok(LoadedStatics {
            theta: sol.theta,
            tip_displacement: sol.tip_displacement,
            plate_force: sol.external_force,
            human_force: 0.0,
        });
    }
    if !(f_sma >= 0.0) {
        return Err(domain(format!("muscle force must be non-negative, got {f_sma}")));
    }
    let free = limb.length() / limb.zeta() * f_sma;
    let pushed = (free - human_compliance * human_force).max(0.0);
    let carried = (free - pushed) / human_compliance;
    let (disp, plate_force) = match plate_dist {
        Some(d) if pushed > d => (d, (pushed - d) / limb.tip_compliance()),
        _ => (pushed, 0.0),
    };
    Ok(LoadedStatics {
        theta: beam::angle_from_displacement(disp, limb.length())?,
        tip_displacement: disp,
        plate_force,
        human_force: carried,
    })
}

/// A single simulated limb with its own noise generator.
#[derive(Debug, Clone)]
pub struct Plant {
    params: PlantParams,
    safety: SafetyParams,
    plate_dist: Option<f64>,
    human_force: f64,
    human_compliance: f64,
    tick: f64,
    state: PlantState,
    k: u64,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(
        params: PlantParams,
        safety: SafetyParams,
        plate_dist: Option<f64>,
        tick: f64,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if let Some(d) = plate_dist {
            if !(d > 0.0) {
                return Err(domain(format!("plate distance must be positive, got {d}")));
            }
        }
        if !(tick > 0.0) {
            return Err(domain(format!("tick must be positive, got {tick}")));
        }
        Ok(Plant {
            state: Self::rest_state(&params),
            params,
            safety,
            plate_dist,
            human_force: 0.0,
            human_compliance: 1.0,
            tick,
            k: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn rest_state(params: &PlantParams) -> PlantState {
        PlantState {
            temperature: params.ambient,
            phase: PhaseState::martensite(params.ambient),
            theta: 0.0,
            tip_displacement: 0.0,
            f_sma: 0.0,
            f_ext: 0.0,
            r_true: resistance_model(params.ambient, 0.0, params),
            in_contact: false,
        }
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn safety(&self) -> &SafetyParams {
        &self.safety
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn tick(&self) -> f64 {
        self.tick
    }

    /// Apply a tip push of `force` N through `compliance` mm/N from the next
    /// step on. Zero removes the push.
    pub fn set_human_load(&mut self, force: f64, compliance: f64) -> Result<()> {
        if !(force >= 0.0) || !(compliance > 0.0) {
            return Err(domain("human load must be non-negative with positive compliance"));
        }
        self.human_force = force;
        self.human_compliance = compliance;
        Ok(())
    }

    /// Back to ambient rest; the noise stream continues.
    pub fn reset(&mut self) {
        self.state = Self::rest_state(&self.params);
        self.human_force = 0.0;
        self.k = 0;
    }

    fn noise(&mut self, sigma: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        sigma * z.clamp(-NOISE_CLIP_SIGMAS, NOISE_CLIP_SIGMAS)
    }

    /// Advance one tick under nominal input `u_nom` and return the measured frame.
    pub fn step(&mut self, u_nom: f64) -> Result<SampleFrame> {
        let p = self.params;
        let s = self.state;

        let u_sup = safety::apply_supervisor(u_nom.max(0.0), s.temperature, &self.safety);
        let safe_ceiling = (self.safety.gamma() * safety::saturation_limit(s.temperature, &self.safety)).max(0.0);
        let floor = (p.i_min * s.r_true).min(safe_ceiling);
        let u = u_sup.max(floor);

        let temp = thermal_step(s.temperature, u, &p);
        let phase = phase_update(&s.phase, s.temperature, temp, &p);
        let f_sma = muscle_force(temp, phase.xi, &p);
        let statics = loaded_statics(
            f_sma,
            self.plate_dist,
            self.human_force,
            self.human_compliance,
            &p.limb,
        )?;
        let r_true = resistance_model(temp, phase.xi, &p);
        let f_ext = statics.plate_force + statics.human_force;

        self.state = PlantState {
            temperature: temp,
            phase,
            theta: statics.theta,
            tip_displacement: statics.tip_displacement,
            f_sma,
            f_ext,
            r_true,
            in_contact: f_ext > 0.0,
        };

        let current = u / r_true;
        let resistance = u / current + self.noise(p.sigma_r);
        let temperature = temp + self.noise(p.sigma_t);
        let theta = (statics.theta + self.noise(p.sigma_theta)).clamp(0.0, std::f64::consts::FRAC_PI_2);
        self.k += 1;
        Ok(SampleFrame {
            k: self.k,
            t_s: self.k as f64 * self.tick,
            voltage: u,
            current,
            resistance,
            temperature,
            theta,
            f_ext,
            contact: f_ext > 0.0,
        })
    }
}

/// A scripted babbling run against one plate setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration: usize,
    pub tick_s: f64,
    pub plate_dist_mm: Option<f64>,
    pub t_max_limit: f64,
    pub setpoint_schedule: Vec<Hold>,
    pub seed: u64,
    pub gamma: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.plate_dist_mm {
            if !(d > 0.0) {
                return Err(domain("plate distance must be positive"));
            }
        }
        if self
            .setpoint_schedule
            .iter()
            .any(|h| !(0.0..std::f64::consts::FRAC_PI_2).contains(&h.theta_rad))
        {
            return Err(domain("setpoints must lie in [0, π/2)"));
        }
        if self.setpoint_schedule.is_empty() {
            return Err(domain("scenario has no setpoints"));
        }
        Ok(())
    }

    pub fn build_plant(&self, params: &PlantParams) -> Result<Plant> {
        self.validate()?;
        let safety = params.safety(self.t_max_limit, self.gamma)?;
        Plant::new(*params, safety, self.plate_dist_mm, self.tick_s, self.seed)
    }
}

/// Run `scenario` under PI babbling, returning every frame.
pub fn run_scenario(
    scenario: &Scenario,
    params: &PlantParams,
    gains: BabblerGains,
) -> Result<Vec<SampleFrame>> {
    let mut plant = scenario.build_plant(params)?;
    let mut babbler = Babbler::new(gains, scenario.setpoint_schedule.clone())?;
    let mut frames = Vec::with_capacity(scenario.duration);
    let mut theta_meas = 0.0;
    for _ in 0..scenario.duration {
        let u_nom = babbler.step(theta_meas, scenario.tick_s);
        let frame = plant.step(u_nom)?;
        theta_meas = frame.theta;
        frames.push(frame);
    }
    Ok(frames)
}

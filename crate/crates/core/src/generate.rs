//! Dataset collection procedures run against the simulated limb.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::plant::{PlantParams, SampleFrame, Scenario};
use crate::safety::{random_setpoint_schedule, Babbler, BabblerGains, Hold};

/// Steady-state babbling without contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NocontactPlan {
    pub setpoints: usize,
    pub trials: usize,
    pub theta_lo_deg: f64,
    pub theta_hi_deg: f64,
    pub hold_ticks: usize,
    /// Ticks discarded at the start of each hold.
    pub settle_ticks: usize,
    pub samples_per_hold: usize,
    pub t_max: f64,
    pub gamma: f64,
    pub tick_s: f64,
    pub seed: u64,
}

impl Default for NocontactPlan {
    fn default() -> Self {
        NocontactPlan {
            setpoints: 10,
            trials: 6,
            theta_lo_deg: 10.0,
            theta_hi_deg: 40.0,
            hold_ticks: 300,
            settle_ticks: 200,
            samples_per_hold: 10,
            t_max: 135.0,
            gamma: 0.9,
            tick_s: 0.1,
            seed: 1,
        }
    }
}

impl NocontactPlan {
    pub fn expected_rows(&self) -> usize {
        self.setpoints * self.trials * self.samples_per_hold
    }

    /// Setpoints repeated `trials` times, each trial in its own shuffled order.
    pub fn schedule(&self) -> Result<Vec<Hold>> {
        let base = random_setpoint_schedule(
            self.setpoints,
            self.theta_lo_deg.to_radians(),
            self.theta_hi_deg.to_radians(),
            self.hold_ticks,
            self.seed,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        let mut out = Vec::with_capacity(base.len() * self.trials);
        for _ in 0..self.trials {
            let mut trial = base.clone();
            trial.shuffle(&mut rng);
            out.extend(trial);
        }
        Ok(out)
    }
}

/// Grid of plate distances and temperature limits, babbling in each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactPlan {
    pub plate_dists_mm: Vec<f64>,
    pub t_max_degc: Vec<f64>,
    pub ticks_per_cell: usize,
    pub log_every: usize,
    pub hold_ticks: usize,
    pub theta_lo_deg: f64,
    pub theta_hi_deg: f64,
    pub gamma: f64,
    pub tick_s: f64,
    pub seed: u64,
}

/// Preset sizes for [`ContactPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 16 cells × 15 000 ticks, logged at 1 Hz: 24 000 rows, 400 simulated minutes.
    Full,
    /// 16 cells × 1 500 ticks, logged at 1 Hz: 2 400 rows.
    Ci,
}

impl Default for ContactPlan {
    fn default() -> Self {
        ContactPlan::scaled(Scale::Ci)
    }
}

impl ContactPlan {
    pub fn scaled(scale: Scale) -> Self {
        let ticks_per_cell = match scale {
            Scale::Full => 15_000,
            Scale::Ci => 1_500,
        };
        ContactPlan {
            plate_dists_mm: vec![20.0, 30.0, 40.0, 50.0],
            t_max_degc: vec![85.0, 100.0, 115.0, 130.0],
            ticks_per_cell,
            log_every: 10,
            hold_ticks: 300,
            theta_lo_deg: 10.0,
            theta_hi_deg: 40.0,
            gamma: 0.9,
            tick_s: 0.1,
            seed: 2,
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.plate_dists_mm
            .iter()
            .flat_map(|&d| self.t_max_degc.iter().map(move |&t| (d, t)))
            .collect()
    }

    pub fn rows_per_cell(&self) -> usize {
        self.ticks_per_cell / self.log_every
    }

    pub fn expected_rows(&self) -> usize {
        self.cells().len() * self.rows_per_cell()
    }

    pub fn scenario(&self, cell: usize) -> Result<Scenario> {
        let (d, t_max) = *self
            .cells()
            .get(cell)
            .ok_or_else(|| domain(format!("cell {cell} outside the plan")))?;
        let seed = cell_seed(self.seed, cell);
        let holds = self.ticks_per_cell.div_ceil(self.hold_ticks.max(1));
        Ok(Scenario {
            duration: self.ticks_per_cell,
            tick_s: self.tick_s,
            plate_dist_mm: Some(d),
            t_max_limit: t_max,
            setpoint_schedule: random_setpoint_schedule(
                holds,
                self.theta_lo_deg.to_radians(),
                self.theta_hi_deg.to_radians(),
                self.hold_ticks,
                seed,
            )?,
            seed,
            gamma: self.gamma,
        })
    }
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed ^ (cell as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_bounded(frames: &[SampleFrame], t_max: f64, params: &PlantParams) -> Result<()> {
    let slack = crate::plant::NOISE_CLIP_SIGMAS * params.sigma_t + 1e-6;
    if let Some(f) = frames
        .iter()
        .find(|f| !f.temperature.is_finite() || f.temperature > t_max + slack)
    {
        return Err(Error::Validation(format!(
            "plant diverged: frame {} logged T = {} °C above the {t_max} °C limit",
            f.k, f.temperature
        )));
    }
    Ok(())
}

/// Steady-state samples from PI babbling over the plan's setpoints.
pub fn generate_nocontact(
    plan: &NocontactPlan,
    params: &PlantParams,
    gains: BabblerGains,
) -> Result<Vec<SampleFrame>> {
    if plan.samples_per_hold == 0 || plan.settle_ticks + plan.samples_per_hold > plan.hold_ticks {
        return Err(domain("each hold needs room for its settle window and samples"));
    }
    let schedule = plan.schedule()?;
    let scenario = Scenario {
        duration: schedule.len() * plan.hold_ticks,
        tick_s: plan.tick_s,
        plate_dist_mm: None,
        t_max_limit: plan.t_max,
        setpoint_schedule: schedule.clone(),
        seed: plan.seed,
        gamma: plan.gamma,
    };
    let mut plant = scenario.build_plant(params)?;
    let mut babbler = Babbler::new(gains, schedule)?;
    let window = plan.hold_ticks - plan.settle_ticks;
    let stride = window / plan.samples_per_hold;
    let mut out = Vec::with_capacity(plan.expected_rows());
    let mut theta_meas = 0.0;
    for _ in 0..scenario.duration {
        let tick_in_hold = babbler.ticks_in_hold();
        let u_nom = babbler.step(theta_meas, plan.tick_s);
        let frame = plant.step(u_nom)?;
        theta_meas = frame.theta;
        if tick_in_hold >= plan.settle_ticks {
            let offset = tick_in_hold - plan.settle_ticks;
            // Last tick of each stride so samples end at the hold's end.
            if offset % stride == stride - 1 && offset / stride < plan.samples_per_hold {
                out.push(SampleFrame { k: out.len() as u64, ..frame });
            }
        }
    }
    check_bounded(&out, plan.t_max, params)?;
    Ok(out)
}

/// Babbling against the plate in every grid cell, ordered by (cell, k).
///
/// Cells run in parallel on the current rayon pool; each owns its seed so
/// the output does not depend on scheduling.
pub fn generate_contact(
    plan: &ContactPlan,
    params: &PlantParams,
    gains: BabblerGains,
) -> Result<Vec<SampleFrame>> {
    if plan.log_every == 0 || plan.cells().is_empty() {
        return Err(domain("contact plan needs at least one cell and log_every ≥ 1"));
    }
    let cells: Vec<Vec<SampleFrame>> = (0..plan.cells().len())
        .into_par_iter()
        .map(|cell| -> Result<Vec<SampleFrame>> {
            let scenario = plan.scenario(cell)?;
            let frames = crate::plant::run_scenario(&scenario, params, gains)?;
            check_bounded(&frames, scenario.t_max_limit, params)?;
            Ok(frames
                .into_iter()
                .filter(|f| (f.k as usize).is_multiple_of(plan.log_every))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(cells
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, f)| SampleFrame { k: i as u64, ..f })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_sizes() {
        assert_eq!(NocontactPlan::default().expected_rows(), 600);
        assert_eq!(ContactPlan::scaled(Scale::Full).expected_rows(), 24_000);
        assert_eq!(ContactPlan::scaled(Scale::Ci).expected_rows(), 2_400);
        assert_eq!(ContactPlan::default().cells().len(), 16);
    }

    #[test]
    fn schedule_repeats_setpoints() {
        let plan = NocontactPlan::default();
        let s = plan.schedule().unwrap();
        assert_eq!(s.len(), 60);
        let mut first: Vec<f64> = s[..10].iter().map(|h| h.theta_rad).collect();
        let mut second: Vec<f64> = s[10..20].iter().map(|h| h.theta_rad).collect();
        first.sort_by(f64::total_cmp);
        second.sort_by(f64::total_cmp);
        assert_eq!(first, second);
    }

    #[test]
    fn zero_width_schedule_stays_flat() {
        // Setpoints pinned near zero: the limb never bends appreciably.
        let plan = NocontactPlan { theta_lo_deg: 0.0, theta_hi_deg: 1e-9, trials: 1, ..Default::default() };
        let frames = generate_nocontact(&plan, &PlantParams::default(), BabblerGains::default()).unwrap();
        assert_eq!(frames.len(), 100);
        assert!(frames.iter().all(|f| f.theta < 1f64.to_radians()));
    }
}

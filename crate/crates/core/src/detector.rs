//! Contact classification from estimated external force, threshold
//! calibration, and the operating-temperature sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::estimators::{cross_validate_contact, CvConfig, SignalSubset};
use crate::plant::SampleFrame;

/// `F̂ > F_thresh`.
pub fn classify(f_hat: f64, f_thresh: f64) -> bool {
    f_hat > f_thresh
}

/// Three-level contact indication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactLevel {
    None,
    Contact,
    High,
}

pub fn classify3(f_hat: f64, t_lo: f64, t_hi: f64) -> Result<ContactLevel> {
    if !(t_lo < t_hi) {
        return Err(domain(format!("thresholds must satisfy lo < hi, got {t_lo} / {t_hi}")));
    }
    Ok(if f_hat > t_hi {
        ContactLevel::High
    } else if f_hat > t_lo {
        ContactLevel::Contact
    } else {
        ContactLevel::None
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(predictions: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if predictions.len() != truth.len() {
        return Err(domain(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1; any 0/0 evaluates to 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> Metrics {
    let tp = c.tp as f64;
    let precision = ratio(tp, tp + c.fp as f64);
    let recall = ratio(tp, tp + c.fn_ as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Metrics { precision, recall, f1 }
}

/// Metric maximised by [`calibrate_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    F1,
    Precision,
}

impl Criterion {
    fn pick(&self, m: &Metrics) -> f64 {
        match self {
            Criterion::F1 => m.f1,
            Criterion::Precision => m.precision,
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Criterion::F1),
            "precision" => Ok(Criterion::Precision),
            other => Err(domain(format!("unknown criterion {other:?} (expected f1 or precision)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub f_thresh_star: f64,
    pub criterion: Criterion,
    pub curve: Vec<ThresholdPoint>,
}

impl ThresholdCalibration {
    pub fn best(&self) -> &ThresholdPoint {
        self.curve
            .iter()
            .find(|p| p.threshold == self.f_thresh_star)
            .expect("selected threshold is on the curve")
    }

    /// Plot-ready `threshold,precision,recall,f1` text.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold_N,precision,recall,f1\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.threshold, p.metrics.precision, p.metrics.recall, p.metrics.f1
            ));
        }
        out
    }
}

/// `0, 0.005, …, 0.2` N.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.005).collect()
}

/// Evaluate the detector at each grid threshold and keep the best one.
/// Ties go to the larger threshold.
pub fn calibrate_threshold(
    scores: &[f64],
    truth: &[bool],
    grid: &[f64],
    criterion: Criterion,
) -> Result<ThresholdCalibration> {
    if grid.is_empty() {
        return Err(domain("threshold grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(domain("threshold grid must be strictly increasing"));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &threshold in grid {
        let preds: Vec<bool> = scores.iter().map(|&s| classify(s, threshold)).collect();
        let counts = confusion(&preds, truth)?;
        let metrics = precision_recall_f1(&counts);
        let value = criterion.pick(&metrics);
        if best.is_none_or(|(v, _)| value >= v) {
            best = Some((value, threshold));
        }
        curve.push(ThresholdPoint { threshold, counts, metrics });
    }
    Ok(ThresholdCalibration {
        f_thresh_star: best.expect("grid is non-empty").1,
        criterion,
        curve,
    })
}

/// Settings for [`sweep_tmax`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub t_start: f64,
    pub t_stop: f64,
    pub t_step: f64,
    pub degree: usize,
    pub cv: CvConfig,
    /// `{R,θ}` stays usable while its error is within this factor of `{T,θ}`.
    pub divergence_ratio: f64,
    /// Buckets with fewer rows are skipped.
    pub min_rows: usize,
    /// Buckets with fewer in-contact rows are skipped: the error ratio is
    /// meaningless when both models only ever predict zero.
    pub min_contact_rows: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            t_start: 60.0,
            t_stop: 130.0,
            t_step: 5.0,
            degree: 3,
            cv: CvConfig::default(),
            divergence_ratio: 1.5,
            min_rows: 60,
            min_contact_rows: 30,
        }
    }
}

impl SweepConfig {
    pub fn temperatures(&self) -> Vec<f64> {
        let n = ((self.t_stop - self.t_start) / self.t_step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.t_start + i as f64 * self.t_step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetError {
    pub subset: SignalSubset,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub t_max: f64,
    pub rows: usize,
    pub errors: Vec<SubsetError>,
}

impl SweepEntry {
    pub fn error(&self, subset: SignalSubset) -> Option<f64> {
        self.errors.iter().find(|e| e.subset == subset).map(|e| e.mean_abs_error)
    }

    /// `ē({R,θ}) / ē({T,θ})`, when both were evaluated.
    pub fn divergence(&self) -> Option<f64> {
        Some(self.error(SignalSubset::RTheta)? / self.error(SignalSubset::TTheta)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedBucket {
    pub t_max: f64,
    pub rows: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmaxSweep {
    pub entries: Vec<SweepEntry>,
    pub skipped: Vec<SkippedBucket>,
    pub divergence_ratio: f64,
    /// Last evaluated `T_max` before `{R,θ}` first diverges from `{T,θ}`.
    pub operational_limit: Option<f64>,
}

impl TmaxSweep {
    /// Plot-ready table, one row per evaluated bucket.
    pub fn table_csv(&self) -> String {
        let subsets: Vec<SignalSubset> = self
            .entries
            .first()
            .map(|e| e.errors.iter().map(|s| s.subset).collect())
            .unwrap_or_default();
        let mut out = String::from("t_max_degC,rows");
        for s in &subsets {
            out.push_str(&format!(",err_{}_N", s.as_str()));
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{},{}", e.t_max, e.rows));
            for s in &subsets {
                out.push_str(&format!(",{}", e.error(*s).unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

enum Bucket {
    Done(SweepEntry),
    Skipped(SkippedBucket),
}

/// Cross-validated contact error per signal subset on `{T ≤ T_max}` slices.
///
/// Once a slice holds the whole dataset the remaining (identical) slices
/// are not evaluated.
pub fn sweep_tmax(frames: &[SampleFrame], subsets: &[SignalSubset], cfg: &SweepConfig) -> Result<TmaxSweep> {
    if subsets.is_empty() {
        return Err(domain("sweep needs at least one signal subset"));
    }
    if !(cfg.t_step > 0.0 && cfg.t_stop >= cfg.t_start) {
        return Err(domain("sweep range must be non-empty with a positive step"));
    }
    let mut slices: Vec<(f64, Vec<SampleFrame>)> = Vec::new();
    for t_max in cfg.temperatures() {
        let slice: Vec<SampleFrame> = frames
            .iter()
            .filter(|f| f.temperature >= 0.0 && f.temperature <= t_max)
            .copied()
            .collect();
        let complete = slice.len() == frames.len();
        slices.push((t_max, slice));
        if complete {
            break;
        }
    }
    let buckets: Vec<Bucket> = slices
        .par_iter()
        .map(|(t_max, slice)| -> Result<Bucket> {
            let min_rows = cfg.min_rows.max(cfg.cv.folds);
            if slice.len() < min_rows {
                return Ok(Bucket::Skipped(SkippedBucket {
                    t_max: *t_max,
                    rows: slice.len(),
                    reason: format!("fewer than {min_rows} rows"),
                }));
            }
            let in_contact = slice.iter().filter(|f| f.contact).count();
            if in_contact < cfg.min_contact_rows {
                return Ok(Bucket::Skipped(SkippedBucket {
                    t_max: *t_max,
                    rows: slice.len(),
                    reason: format!("{in_contact} in-contact rows, fewer than {}", cfg.min_contact_rows),
                }));
            }
            let mut errors = Vec::with_capacity(subsets.len());
            for &subset in subsets {
                let out = cross_validate_contact(slice, subset, cfg.degree, &cfg.cv)?;
                errors.push(SubsetError { subset, mean_abs_error: out.report.mean_abs_error });
            }
            Ok(Bucket::Done(SweepEntry { t_max: *t_max, rows: slice.len(), errors }))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for b in buckets {
        match b {
            Bucket::Done(e) => entries.push(e),
            Bucket::Skipped(s) => skipped.push(s),
        }
    }
    let operational_limit = operational_limit(&entries, cfg.divergence_ratio);
    Ok(TmaxSweep { entries, skipped, divergence_ratio: cfg.divergence_ratio, operational_limit })
}

/// Last `T_max` before the first bucket where `ē({R,θ}) > ratio · ē({T,θ})`.
pub fn operational_limit(entries: &[SweepEntry], ratio: f64) -> Option<f64> {
    let mut limit = None;
    for e in entries {
        let (Some(r), Some(t)) = (e.error(SignalSubset::RTheta), e.error(SignalSubset::TTheta)) else {
            continue;
        };
        if r > ratio * t {
            break;
        }
        limit = Some(e.t_max);
    }
    limit
}

/// Everything the detector needs at run time, with its justification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub subset: SignalSubset,
    pub threshold: ThresholdCalibration,
    pub sweep: TmaxSweep,
    pub t_max_operational: Option<f64>,
    /// Rows of the operational slice the threshold was calibrated on.
    pub rows: usize,
}

/// Find the operational limit, then pick the threshold on out-of-fold
/// predictions of `subset` over the rows at or below that limit.
pub fn calibrate_detector(
    frames: &[SampleFrame],
    subset: SignalSubset,
    criterion: Criterion,
    grid: &[f64],
    cfg: &SweepConfig,
) -> Result<CalibrationResult> {
    let mut subsets = vec![SignalSubset::RTheta, SignalSubset::TTheta];
    if !subsets.contains(&subset) {
        subsets.insert(0, subset);
    }
    let sweep = sweep_tmax(frames, &subsets, cfg)?;
    let limit = sweep.operational_limit;
    let slice: Vec<SampleFrame> = frames
        .iter()
        .filter(|f| limit.is_none_or(|t| f.temperature <= t))
        .copied()
        .collect();
    let outcome = cross_validate_contact(&slice, subset, cfg.degree, &cfg.cv)?;
    let truth: Vec<bool> = slice.iter().map(|f| f.contact).collect();
    let threshold = calibrate_threshold(&outcome.predictions, &truth, grid, criterion)?;
    Ok(CalibrationResult { subset, threshold, sweep, t_max_operational: limit, rows: slice.len() })
}

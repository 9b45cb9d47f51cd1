//! Learned self-sensing predictors.
//!
//! * Pose / muscle force from `(T, R)` with a hot/cold switching pair of
//!   polynomials.
//! * External contact force from a subset of `(R, T, θ)`.
//!
//! Error metrics divide by `K − 1` and use absolute errors; percentage
//! errors guard the denominator with [`FORCE_FLOOR`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beam::{self, LimbParams};
use crate::error::{domain, Error, Result};
use crate::plant::SampleFrame;
use crate::poly::{kfold_split, FoldMode, PolyModel};

/// Denominator floor for percentage errors, N.
pub const FORCE_FLOOR: f64 = 0.05;

/// One no-contact training row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub f_sma: f64,
    pub temperature: f64,
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPose {
    pub rows: Vec<PoseSample>,
    /// Frames whose bend angle fell outside `[0, π/2]`.
    pub rejected: usize,
}

/// Convert measured bend angles into muscle-force labels.
pub fn label_sma_force(frames: &[SampleFrame], limb: &LimbParams) -> LabeledPose {
    let mut rows = Vec::with_capacity(frames.len());
    let mut rejected = 0;
    for f in frames {
        match beam::sma_force_from_angle(f.theta, limb.zeta()) {
            Ok(f_sma) => rows.push(PoseSample {
                f_sma,
                temperature: f.temperature,
                resistance: f.resistance,
            }),
            Err(_) => rejected += 1,
        }
    }
    LabeledPose { rows, rejected }
}

/// Boundary between the cold and hot operating regimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotColdSplit {
    pub t_split: f64,
    pub r_split: f64,
}

impl Default for HotColdSplit {
    fn default() -> Self {
        HotColdSplit { t_split: 100.0, r_split: 1.7 }
    }
}

impl HotColdSplit {
    /// Cold iff `T < T_split` and `R > R_split`; everything else is hot.
    pub fn is_cold(&self, temperature: f64, resistance: f64) -> bool {
        temperature < self.t_split && resistance > self.r_split
    }
}

pub fn split_hot_cold(
    rows: &[PoseSample],
    split: &HotColdSplit,
) -> (Vec<PoseSample>, Vec<PoseSample>) {
    rows.iter()
        .partition(|r| split.is_cold(r.temperature, r.resistance))
}

fn pose_vars() -> Vec<String> {
    vec!["T".to_string(), "R".to_string()]
}

/// Cold and hot polynomials in `(T, R)` selected by [`HotColdSplit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingModel {
    pub cold: PolyModel,
    pub hot: PolyModel,
    pub split: HotColdSplit,
    pub limb: LimbParams,
}

impl SwitchingModel {
    pub fn validate(&self) -> Result<()> {
        self.cold.validate()?;
        self.hot.validate()?;
        if self.cold.var_names() != pose_vars().as_slice() || self.hot.var_names() != pose_vars().as_slice() {
            return Err(domain("switching model branches must use variables [T, R]"));
        }
        Ok(())
    }

    pub fn predict_sma_force(&self, temperature: f64, resistance: f64) -> f64 {
        let branch = if self.split.is_cold(temperature, resistance) {
            &self.cold
        } else {
            &self.hot
        };
        branch
            .predict(&[temperature, resistance])
            .expect("branch variables are [T, R]")
    }

    /// Bend angle implied by the predicted force, clamped into the
    /// reachable range so extrapolation never errors.
    pub fn predict_pose(&self, temperature: f64, resistance: f64) -> f64 {
        let f = self
            .predict_sma_force(temperature, resistance)
            .clamp(0.0, self.limb.max_reachable_force());
        beam::angle_from_force(f, self.limb.zeta()).expect("force clamped into reachable range")
    }
}

pub fn fit_pose_model(
    rows: &[PoseSample],
    m_cold: usize,
    m_hot: usize,
    split: HotColdSplit,
    limb: LimbParams,
) -> Result<SwitchingModel> {
    let (cold, hot) = split_hot_cold(rows, &split);
    let fit = |part: &[PoseSample], degree: usize, name: &str| -> Result<PolyModel> {
        if part.is_empty() {
            return Err(Error::Fit(format!("{name} partition is empty")));
        }
        let inputs: Vec<Vec<f64>> = part.iter().map(|r| vec![r.temperature, r.resistance]).collect();
        let targets: Vec<f64> = part.iter().map(|r| r.f_sma).collect();
        PolyModel::fit(pose_vars(), degree, &inputs, &targets)
            .map_err(|e| Error::Fit(format!("{name} partition: {e}")))
    };
    Ok(SwitchingModel {
        cold: fit(&cold, m_cold, "cold")?,
        hot: fit(&hot, m_hot, "hot")?,
        split,
        limb,
    })
}

/// Which self-sensing signals feed a contact-force model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalSubset {
    #[serde(rename = "rttheta")]
    RTTheta,
    #[serde(rename = "rtheta")]
    RTheta,
    #[serde(rename = "ttheta")]
    TTheta,
}

impl SignalSubset {
    pub const ALL: [SignalSubset; 3] = [SignalSubset::RTTheta, SignalSubset::RTheta, SignalSubset::TTheta];

    pub fn var_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            SignalSubset::RTTheta => &["R", "T", "theta"],
            SignalSubset::RTheta => &["R", "theta"],
            SignalSubset::TTheta => &["T", "theta"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn inputs(&self, f: &SampleFrame) -> Vec<f64> {
        match self {
            SignalSubset::RTTheta => vec![f.resistance, f.temperature, f.theta],
            SignalSubset::RTheta => vec![f.resistance, f.theta],
            SignalSubset::TTheta => vec![f.temperature, f.theta],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SignalSubset::RTTheta => "rttheta",
            SignalSubset::RTheta => "rtheta",
            SignalSubset::TTheta => "ttheta",
        }
    }

    fn from_var_names(names: &[String]) -> Option<Self> {
        SignalSubset::ALL.into_iter().find(|s| s.var_names() == names)
    }
}

impl fmt::Display for SignalSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            SignalSubset::RTTheta => "{R,T,θ}",
            SignalSubset::RTheta => "{R,θ}",
            SignalSubset::TTheta => "{T,θ}",
        };
        f.write_str(label)
    }
}

impl FromStr for SignalSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rttheta" => Ok(SignalSubset::RTTheta),
            "rtheta" => Ok(SignalSubset::RTheta),
            "ttheta" => Ok(SignalSubset::TTheta),
            other => Err(domain(format!(
                "unknown signal subset {other:?} (expected rttheta, rtheta or ttheta)"
            ))),
        }
    }
}

/// A contact-force polynomial tied to the signals it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyModel", into = "PolyModel")]
pub struct ContactModel {
    subset: SignalSubset,
    model: PolyModel,
}

impl TryFrom<PolyModel> for ContactModel {
    type Error = Error;

    fn try_from(model: PolyModel) -> Result<Self> {
        model.validate()?;
        let subset = SignalSubset::from_var_names(model.var_names()).ok_or_else(|| {
            domain(format!("no signal subset uses variables {:?}", model.var_names()))
        })?;
        Ok(ContactModel { subset, model })
    }
}

impl From<ContactModel> for PolyModel {
    fn from(c: ContactModel) -> Self {
        c.model
    }
}

impl ContactModel {
    pub fn subset(&self) -> SignalSubset {
        self.subset
    }

    pub fn poly(&self) -> &PolyModel {
        &self.model
    }

    pub fn predict(&self, frame: &SampleFrame) -> f64 {
        self.model
            .predict(&self.subset.inputs(frame))
            .expect("subset inputs match model width")
    }
}

/// Least-squares polynomial of degree `m` from `subset` to `F_ext`.
pub fn fit_contact_model(frames: &[SampleFrame], subset: SignalSubset, m: usize) -> Result<ContactModel> {
    let inputs: Vec<Vec<f64>> = frames.iter().map(|f| subset.inputs(f)).collect();
    let targets: Vec<f64> = frames.iter().map(|f| f.f_ext).collect();
    let model = PolyModel::fit(subset.var_names(), m, &inputs, &targets)
        .map_err(|e| Error::Fit(format!("{subset} contact model: {e}")))?;
    Ok(ContactModel { subset, model })
}

/// Mean absolute and mean percentage error over `k` predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// N
    pub mean_abs_error: f64,
    /// %
    pub mean_pct_error: f64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<ErrorReport>,
}

/// `ē = Σ|e|/(K−1)` and `ē_p = 100·Σ(|e|/max(F, F_floor))/(K−1)`.
pub fn evaluate(predicted: &[f64], actual: &[f64]) -> Result<ErrorReport> {
    if predicted.len() != actual.len() {
        return Err(domain(format!(
            "{} predictions for {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    let k = actual.len();
    if k < 2 {
        return Err(domain(format!("error metrics need K ≥ 2, got {k}")));
    }
    let denom = (k - 1) as f64;
    let (mut abs, mut pct) = (0.0, 0.0);
    for (p, a) in predicted.iter().zip(actual) {
        let e = (p - a).abs();
        abs += e;
        pct += e / a.max(FORCE_FLOOR);
    }
    Ok(ErrorReport {
        mean_abs_error: abs / denom,
        mean_pct_error: 100.0 * pct / denom,
        k,
        folds: Vec::new(),
    })
}

/// Cross-validation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub mode: FoldMode,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 3, seed: 0, mode: FoldMode::Shuffled }
    }
}

/// Pooled held-out report plus the out-of-fold prediction for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: ErrorReport,
    pub predictions: Vec<f64>,
    /// Mean in-sample error of the per-fold fits.
    pub train_mean_abs_error: f64,
}

fn cross_validate<T, M>(
    items: &[T],
    targets: &[f64],
    cv: &CvConfig,
    fit: impl Fn(&[T]) -> Result<M>,
    predict: impl Fn(&M, &T) -> f64,
) -> Result<CvOutcome>
where
    T: Clone,
{
    let folds = kfold_split(items.len(), cv.folds, cv.seed, cv.mode)?;
    let mut predictions = vec![0.0; items.len()];
    let mut fold_reports = Vec::with_capacity(folds.len());
    let mut train_err = 0.0;
    for fold in &folds {
        let train: Vec<T> = fold.train.iter().map(|&i| items[i].clone()).collect();
        let model = fit(&train)?;
        let train_pred: Vec<f64> = train.iter().map(|t| predict(&model, t)).collect();
        let train_true: Vec<f64> = fold.train.iter().map(|&i| targets[i]).collect();
        train_err += evaluate(&train_pred, &train_true)?.mean_abs_error;
        let mut pred = Vec::with_capacity(fold.test.len());
        let mut truth = Vec::with_capacity(fold.test.len());
        for &i in &fold.test {
            let p = predict(&model, &items[i]);
            predictions[i] = p;
            pred.push(p);
            truth.push(targets[i]);
        }
        fold_reports.push(evaluate(&pred, &truth)?);
    }
    let mut report = evaluate(&predictions, targets)?;
    report.folds = fold_reports;
    Ok(CvOutcome {
        report,
        predictions,
        train_mean_abs_error: train_err / folds.len() as f64,
    })
}

pub fn cross_validate_pose(
    rows: &[PoseSample],
    m_cold: usize,
    m_hot: usize,
    split: HotColdSplit,
    limb: LimbParams,
    cv: &CvConfig,
) -> Result<CvOutcome> {
    let targets: Vec<f64> = rows.iter().map(|r| r.f_sma).collect();
    cross_validate(
        rows,
        &targets,
        cv,
        |train| fit_pose_model(train, m_cold, m_hot, split, limb),
        |m, r| m.predict_sma_force(r.temperature, r.resistance),
    )
}

pub fn cross_validate_contact(
    frames: &[SampleFrame],
    subset: SignalSubset,
    m: usize,
    cv: &CvConfig,
) -> Result<CvOutcome> {
    let targets: Vec<f64> = frames.iter().map(|f| f.f_ext).collect();
    cross_validate(
        frames,
        &targets,
        cv,
        |train| fit_contact_model(train, subset, m),
        |model, f| model.predict(f),
    )
}

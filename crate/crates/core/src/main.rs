use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sma_proprio::config::Config;
use sma_proprio::demo::{self, parse_script, replay, states_to_jsonl};
use sma_proprio::detector::{calibrate_detector, default_threshold_grid, sweep_tmax, Criterion};
use sma_proprio::estimators::{
    cross_validate_contact, cross_validate_pose, evaluate, fit_contact_model, fit_pose_model, label_sma_force,
    ContactModel, CvConfig, ErrorReport, SignalSubset, SwitchingModel,
};
use sma_proprio::generate::{generate_contact, generate_nocontact, Scale};
use sma_proprio::io::{self, Dataset, DatasetHeader, DatasetKind, FrameBounds};
use sma_proprio::poly::FoldMode;
use sma_proprio::{Error, Result};

const POSE_KIND: &str = "pose_model";
const CONTACT_KIND: &str = "contact_model";
const CALIBRATION_KIND: &str = "calibration";
const SWEEP_KIND: &str = "tmax_sweep";
const REPORT_KIND: &str = "evaluation";

#[derive(Parser)]
#[command(name = "sma-proprio", version, about = "Self-sensing proprioception for SMA-actuated soft limbs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML settings file; see docs/config.toml for every key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed of whatever the command generates or shuffles.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Nocontact,
    Contact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Signals {
    Rttheta,
    Rtheta,
    Ttheta,
}

impl From<Signals> for SignalSubset {
    fn from(s: Signals) -> Self {
        match s {
            Signals::Rttheta => SignalSubset::RTTheta,
            Signals::Rtheta => SignalSubset::RTheta,
            Signals::Ttheta => SignalSubset::TTheta,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    F1,
    Precision,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, default_value_t = 3)]
    folds: usize,
    /// Keep rows in time order instead of shuffling before splitting.
    #[arg(long)]
    blocked: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a babbling dataset on the simulated limb.
    Simulate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, value_enum, default_value = "ci")]
        scale: Scale,
        /// Restrict the contact grid to one plate distance.
        #[arg(long)]
        plate_mm: Option<f64>,
        /// Restrict the contact grid to one temperature limit, or set the
        /// no-contact limit.
        #[arg(long)]
        tmax_degc: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the switching pose model on a no-contact dataset.
    FitPose {
        #[arg(long)]
        data: PathBuf,
        /// Degree of both branches (default from config).
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a contact-force model on a contact dataset.
    FitContact {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "rttheta")]
        signals: Signals,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on a dataset, in-sample and cross-validated.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cv: CvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find the operational temperature limit and the contact threshold.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "rtheta")]
        signals: Signals,
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long, value_enum, default_value = "f1")]
        criterion: CriterionArg,
        #[command(flatten)]
        cv: CvArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-threshold metric curve as CSV.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Contact-model error per signal subset on growing temperature slices.
    SweepTmax {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        degree: Option<usize>,
        #[command(flatten)]
        cv: CvArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the error table as CSV.
        #[arg(long)]
        table_out: Option<PathBuf>,
    },
    /// Run the live contact demo, or replay a command script headless.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Saved pose model; fitted from fresh no-contact data when absent.
        #[arg(long)]
        pose_model: Option<PathBuf>,
        /// Script of `<tick> <json command>` lines to replay without a socket.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Ticks to run in replay mode.
        #[arg(long, default_value_t = 300)]
        ticks: u64,
        /// Replay log destination (JSON lines); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// What `evaluate` writes.
#[derive(Debug, Serialize, Deserialize)]
struct EvaluationReport {
    model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    signals: Option<SignalSubset>,
    rows: usize,
    in_sample: ErrorReport,
    cross_validated: ErrorReport,
    cross_validated_train_mean_abs_error: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Fit(_) => 3,
        Error::Validation(_) | Error::Parse { .. } | Error::Schema { .. } | Error::Domain(_) | Error::Range(_) => 2,
        Error::Io(_) | Error::Json(_) => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    }
    let seed = cli.common.seed;
    let cv_config = |args: &CvArgs, base: CvConfig| CvConfig {
        folds: args.folds,
        seed: seed.unwrap_or(base.seed),
        mode: if args.blocked { FoldMode::Blocked } else { base.mode },
    };

    match cli.command {
        Command::Simulate { kind, scale, plate_mm, tmax_degc, out } => {
            simulate(&mut cfg, kind, scale, plate_mm, tmax_degc, seed, &out)
        }
        Command::FitPose { data, degree, out } => {
            let d = read_kind(&data, DatasetKind::Nocontact)?;
            let labeled = label_sma_force(&d.frames, &cfg.plant.limb);
            let (m_cold, m_hot) = degree.map_or((cfg.pose.m_cold, cfg.pose.m_hot), |m| (m, m));
            let model = fit_pose_model(&labeled.rows, m_cold, m_hot, cfg.pose.split, cfg.plant.limb)?;
            eprintln!("pose model fitted on {} rows ({} rejected)", labeled.rows.len(), labeled.rejected);
            io::write_artifact(&out, POSE_KIND, &model)
        }
        Command::FitContact { data, signals, degree, out } => {
            let d = read_kind(&data, DatasetKind::Contact)?;
            let model = fit_contact_model(&d.frames, signals.into(), degree)?;
            io::write_artifact(&out, CONTACT_KIND, &model)
        }
        Command::Evaluate { data, model, cv, out } => {
            let cv = cv_config(&cv, cfg.sweep.cv);
            let report = evaluate_model(&data, &model, &cv)?;
            eprintln!(
                "held-out mean |e| = {:.6} N ({:.3} %), in-sample {:.6} N",
                report.cross_validated.mean_abs_error,
                report.cross_validated.mean_pct_error,
                report.in_sample.mean_abs_error
            );
            io::write_artifact(&out, REPORT_KIND, &report)
        }
        Command::Calibrate { data, signals, degree, criterion, cv, out, curve_out } => {
            let d = read_kind(&data, DatasetKind::Contact)?;
            let mut sweep = cfg.sweep;
            sweep.cv = cv_config(&cv, sweep.cv);
            if let Some(m) = degree {
                sweep.degree = m;
            }
            let criterion = match criterion {
                CriterionArg::F1 => Criterion::F1,
                CriterionArg::Precision => Criterion::Precision,
            };
            let result = calibrate_detector(&d.frames, signals.into(), criterion, &default_threshold_grid(), &sweep)?;
            let best = result.threshold.best();
            eprintln!(
                "operational limit {:?} °C, F_thresh* = {} N (precision {:.3}, recall {:.3}, F1 {:.3})",
                result.t_max_operational, best.threshold, best.metrics.precision, best.metrics.recall, best.metrics.f1
            );
            if let Some(path) = curve_out {
                io::write_atomically(&path, result.threshold.curve_csv().as_bytes())?;
            }
            io::write_artifact(&out, CALIBRATION_KIND, &result)
        }
        Command::SweepTmax { data, degree, cv, out, table_out } => {
            let d = read_kind(&data, DatasetKind::Contact)?;
            let mut sweep_cfg = cfg.sweep;
            sweep_cfg.cv = cv_config(&cv, sweep_cfg.cv);
            if let Some(m) = degree {
                sweep_cfg.degree = m;
            }
            let sweep = sweep_tmax(&d.frames, &SignalSubset::ALL, &sweep_cfg)?;
            eprintln!("operational limit {:?} °C", sweep.operational_limit);
            if let Some(path) = table_out {
                io::write_atomically(&path, sweep.table_csv().as_bytes())?;
            }
            io::write_artifact(&out, SWEEP_KIND, &sweep)
        }
        Command::Serve { port, pose_model, replay: script, ticks, out } => {
            if let Some(s) = seed {
                cfg.demo.seed = s;
            }
            let pose: SwitchingModel = match pose_model {
                Some(path) => io::read_artifact(&path, POSE_KIND)?,
                None => cfg.fit_pose()?,
            };
            let mut engine = cfg.demo_engine(pose)?;
            match script {
                Some(path) => {
                    let text = io::read_text(&path)?;
                    let entries = parse_script(&text, &path)?;
                    let log = states_to_jsonl(&replay(&mut engine, &entries, ticks)?)?;
                    match out {
                        Some(p) => io::write_atomically(&p, log.as_bytes()),
                        None => {
                            print!("{log}");
                            Ok(())
                        }
                    }
                }
                None => {
                    let port = port.unwrap_or(cfg.demo.port);
                    let server = demo::spawn_server(engine, ("0.0.0.0", port))?;
                    eprintln!("serving on {}", server.local_addr());
                    server.join()
                }
            }
        }
    }
}

fn simulate(
    cfg: &mut Config,
    kind: Kind,
    scale: Scale,
    plate_mm: Option<f64>,
    tmax_degc: Option<f64>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    #[derive(Serialize)]
    struct Provenance<'a, P: Serialize> {
        kind: &'a str,
        plan: &'a P,
        plant: &'a sma_proprio::plant::PlantParams,
        babbler: &'a sma_proprio::safety::BabblerGains,
    }
    let (dataset, t_max) = match kind {
        Kind::Nocontact => {
            if plate_mm.is_some() {
                return Err(Error::Domain("--plate-mm applies to contact datasets only".into()));
            }
            let plan = &mut cfg.nocontact;
            if let Some(s) = seed {
                plan.seed = s;
            }
            if let Some(t) = tmax_degc {
                plan.t_max = t;
            }
            let frames = generate_nocontact(plan, &cfg.plant, cfg.babbler)?;
            let hash = io::scenario_hash(&Provenance {
                kind: "nocontact",
                plan: &*plan,
                plant: &cfg.plant,
                babbler: &cfg.babbler,
            })?;
            let header = DatasetHeader::new(DatasetKind::Nocontact, plan.seed, plan.tick_s, hash);
            (Dataset { header, frames }, plan.t_max)
        }
        Kind::Contact => {
            let ticks = sma_proprio::generate::ContactPlan::scaled(scale).ticks_per_cell;
            let plan = &mut cfg.contact;
            plan.ticks_per_cell = ticks;
            if let Some(s) = seed {
                plan.seed = s;
            }
            if let Some(d) = plate_mm {
                plan.plate_dists_mm = vec![d];
            }
            if let Some(t) = tmax_degc {
                plan.t_max_degc = vec![t];
            }
            let frames = generate_contact(plan, &cfg.plant, cfg.babbler)?;
            let hash = io::scenario_hash(&Provenance {
                kind: "contact",
                plan: &*plan,
                plant: &cfg.plant,
                babbler: &cfg.babbler,
            })?;
            let header = DatasetHeader::new(DatasetKind::Contact, plan.seed, plan.tick_s, hash);
            let t_max = plan.t_max_degc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (Dataset { header, frames }, t_max)
        }
    };
    io::validate_frames(
        &dataset.frames,
        &FrameBounds { ambient: cfg.plant.ambient, sigma_t: cfg.plant.sigma_t, t_max: Some(t_max) },
    )?;
    let contact = dataset.frames.iter().filter(|f| f.contact).count();
    eprintln!("{} rows ({contact} in contact) -> {}", dataset.frames.len(), out.display());
    io::write_dataset(out, &dataset)
}

fn read_kind(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    let d = io::read_dataset(path)?;
    if d.header.kind != kind {
        return Err(Error::Validation(format!(
            "{} holds a {} dataset, expected {}",
            path.display(),
            d.header.kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(d)
}

#[derive(Deserialize)]
struct KindOnly {
    kind: String,
}

fn evaluate_model(data: &Path, model: &Path, cv: &CvConfig) -> Result<EvaluationReport> {
    let text = io::read_text(model)?;
    let kind: KindOnly = serde_json::from_str(&text)?;
    match kind.kind.as_str() {
        POSE_KIND => {
            let m: SwitchingModel = io::parse_artifact(&text, POSE_KIND)?;
            m.validate()?;
            let d = read_kind(data, DatasetKind::Nocontact)?;
            let rows = label_sma_force(&d.frames, &m.limb).rows;
            let pred: Vec<f64> = rows.iter().map(|r| m.predict_sma_force(r.temperature, r.resistance)).collect();
            let actual: Vec<f64> = rows.iter().map(|r| r.f_sma).collect();
            let cvo = cross_validate_pose(&rows, m.cold.degree(), m.hot.degree(), m.split, m.limb, cv)?;
            Ok(EvaluationReport {
                model: POSE_KIND.into(),
                signals: None,
                rows: rows.len(),
                in_sample: evaluate(&pred, &actual)?,
                cross_validated: cvo.report,
                cross_validated_train_mean_abs_error: cvo.train_mean_abs_error,
            })
        }
        CONTACT_KIND => {
            let m: ContactModel = io::parse_artifact(&text, CONTACT_KIND)?;
            let d = read_kind(data, DatasetKind::Contact)?;
            let pred: Vec<f64> = d.frames.iter().map(|f| m.predict(f)).collect();
            let actual: Vec<f64> = d.frames.iter().map(|f| f.f_ext).collect();
            let cvo = cross_validate_contact(&d.frames, m.subset(), m.poly().degree(), cv)?;
            Ok(EvaluationReport {
                model: CONTACT_KIND.into(),
                signals: Some(m.subset()),
                rows: d.frames.len(),
                in_sample: evaluate(&pred, &actual)?,
                cross_validated: cvo.report,
                cross_validated_train_mean_abs_error: cvo.train_mean_abs_error,
            })
        }
        other => Err(Error::Domain(format!(
            "{} is a {other} file, not a model",
            model.display()
        ))),
    }
}

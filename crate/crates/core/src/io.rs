//! Dataset and artifact files.
//!
//! Datasets are comma-separated text behind a `#`-commented header block.
//! Floats are written with `Display`, the shortest representation that parses
//! back to the same bits, so a read/write cycle is byte-identical.
//!
//! ```text
//! # schema_version: 1
//! # kind: contact
//! # seed: 2
//! # tick_s: 0.1
//! # scenario_hash: 5f1c…
//! k,t_s,V_volts,i_amps,R_ohm,T_degC,theta_rad,F_ext_N,contact
//! 0,0.1,0.44,0.2,2.2031,22.41,0.0021,0,0
//! ```
//!
//! Models, calibrations and reports are pretty-printed JSON objects carrying
//! `schema_version` and `kind` next to their fields.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plant::{SampleFrame, NOISE_CLIP_SIGMAS};

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 9] = [
    "k", "t_s", "V_volts", "i_amps", "R_ohm", "T_degC", "theta_rad", "F_ext_N", "contact",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Nocontact,
    Contact,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Nocontact => "nocontact",
            DatasetKind::Contact => "contact",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nocontact" => Ok(DatasetKind::Nocontact),
            "contact" => Ok(DatasetKind::Contact),
            other => Err(Error::Domain(format!("unknown dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub kind: DatasetKind,
    pub seed: u64,
    pub tick_s: String,
    /// Hex SHA-256 of the configuration that produced the rows.
    pub scenario_hash: String,
}

impl DatasetHeader {
    pub fn new(kind: DatasetKind, seed: u64, tick_s: f64, scenario_hash: String) -> Self {
        DatasetHeader { kind, seed, tick_s: tick_s.to_string(), scenario_hash }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub frames: Vec<SampleFrame>,
}

/// SHA-256 of the canonical JSON encoding of `config`.
pub fn scenario_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn dataset_to_string(data: &Dataset) -> String {
    let h = &data.header;
    let mut out = String::with_capacity(64 * (data.frames.len() + 8));
    // Writing to a String cannot fail.
    let _ = writeln!(out, "# schema_version: {SCHEMA_VERSION}");
    let _ = writeln!(out, "# kind: {}", h.kind.as_str());
    let _ = writeln!(out, "# seed: {}", h.seed);
    let _ = writeln!(out, "# tick_s: {}", h.tick_s);
    let _ = writeln!(out, "# scenario_hash: {}", h.scenario_hash);
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for f in &data.frames {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            f.k,
            f.t_s,
            f.voltage,
            f.current,
            f.resistance,
            f.temperature,
            f.theta,
            f.f_ext,
            u8::from(f.contact)
        );
    }
    out
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomically(path, dataset_to_string(data).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = read_text(path)?;
    parse_dataset(&text, path)
}

/// Parse dataset text; `origin` only labels error messages.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse { path: origin.to_path_buf(), line, message };

    let mut fields: Vec<(String, String, u64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix('#') else { break };
        let Some((key, value)) = rest.split_once(':') else {
            return Err(parse_err(i as u64 + 1, format!("header line without ':': {line:?}")));
        };
        fields.push((key.trim().to_string(), value.trim().to_string(), i as u64 + 1));
    }
    let get = |key: &str| fields.iter().find(|(k, _, _)| k == key);
    let header_end = fields.len() as u64 + 1;

    let (_, version, _) = get("schema_version")
        .ok_or_else(|| parse_err(1, "missing schema_version header".into()))?;
    if version != &SCHEMA_VERSION.to_string() {
        return Err(Error::Schema { found: version.clone(), expected: SCHEMA_VERSION.to_string() });
    }
    let required = |key: &str| {
        get(key).ok_or_else(|| parse_err(header_end, format!("missing {key} header")))
    };
    let (_, kind, kind_line) = required("kind")?;
    let kind = DatasetKind::from_str(kind).map_err(|e| parse_err(*kind_line, e.to_string()))?;
    let (_, seed, seed_line) = required("seed")?;
    let seed = seed.parse::<u64>().map_err(|e| parse_err(*seed_line, format!("seed: {e}")))?;
    let (_, tick_s, tick_line) = required("tick_s")?;
    tick_s.parse::<f64>().map_err(|e| parse_err(*tick_line, format!("tick_s: {e}")))?;
    let (_, hash, _) = required("scenario_hash")?;
    let header = DatasetHeader { kind, seed, tick_s: tick_s.clone(), scenario_hash: hash.clone() };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let names = reader.headers().map_err(|e| parse_err(header_end, e.to_string()))?.clone();
    if names.iter().ne(COLUMNS.iter().copied()) {
        return Err(parse_err(
            header_end,
            format!("expected columns {}, found {}", COLUMNS.join(","), names.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut frames = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != COLUMNS.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", COLUMNS.len(), record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {:?}: {e}", COLUMNS[i], &record[i])))
        };
        let k = record[0]
            .parse::<u64>()
            .map_err(|e| parse_err(line, format!("column k: {:?}: {e}", &record[0])))?;
        let contact = match &record[8] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("column contact: expected 0 or 1, found {other:?}"))),
        };
        if let Some(prev) = frames.last().map(|f: &SampleFrame| f.k) {
            if k <= prev {
                return Err(parse_err(line, format!("k must increase strictly, {k} follows {prev}")));
            }
        }
        frames.push(SampleFrame {
            k,
            t_s: num(1)?,
            voltage: num(2)?,
            current: num(3)?,
            resistance: num(4)?,
            temperature: num(5)?,
            theta: num(6)?,
            f_ext: num(7)?,
            contact,
        });
    }
    Ok(Dataset { header, frames })
}

/// Range checks every generated dataset must pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBounds {
    pub ambient: f64,
    pub sigma_t: f64,
    /// Logged temperatures may not exceed this plus the clipped sensor noise.
    pub t_max: Option<f64>,
}

pub fn validate_frames(frames: &[SampleFrame], bounds: &FrameBounds) -> Result<()> {
    let t_floor = bounds.ambient - NOISE_CLIP_SIGMAS * bounds.sigma_t;
    let t_ceiling = bounds.t_max.map(|t| t + NOISE_CLIP_SIGMAS * bounds.sigma_t + 1e-9);
    for f in frames {
        let bad = |what: String| Err(Error::Validation(format!("row k={}: {what}", f.k)));
        let values = [f.t_s, f.voltage, f.current, f.resistance, f.temperature, f.theta, f.f_ext];
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if f.temperature < t_floor - 1e-9 {
            return bad(format!("T = {} °C below the {t_floor} °C floor", f.temperature));
        }
        if let Some(c) = t_ceiling.filter(|c| f.temperature > *c) {
            return bad(format!("T = {} °C above the {c} °C limit", f.temperature));
        }
        if !(f.resistance > 0.0) {
            return bad(format!("R = {} Ω is not positive", f.resistance));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&f.theta) {
            return bad(format!("θ = {} rad outside [0, π/2]", f.theta));
        }
        if f.f_ext < 0.0 {
            return bad(format!("F_ext = {} N is negative", f.f_ext));
        }
        if f.contact != (f.f_ext > 0.0) {
            return bad(format!("contact = {} disagrees with F_ext = {} N", f.contact, f.f_ext));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeHead {
    schema_version: serde_json::Value,
    kind: String,
}

pub fn artifact_to_string<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&EnvelopeOut { schema_version: SCHEMA_VERSION, kind, body })?;
    s.push('\n');
    Ok(s)
}

pub fn parse_artifact<T: DeserializeOwned>(text: &str, kind: &str) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let head: EnvelopeHead = serde_json::from_value(value.clone())?;
    if head.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema { found: head.schema_version.to_string(), expected: SCHEMA_VERSION.to_string() });
    }
    if head.kind != kind {
        return Err(Error::Domain(format!("expected a {kind} file, found {}", head.kind)));
    }
    if let Some(obj) = value.as_object_mut() {
        obj.remove("schema_version");
        obj.remove("kind");
    }
    Ok(serde_json::from_value(value)?)
}

pub fn write_artifact<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    write_atomically(path, artifact_to_string(kind, body)?.as_bytes())
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = read_text(path)?;
    parse_artifact(&text, kind).map_err(|e| match e {
        Error::Json(j) => Error::Parse { path: path.to_path_buf(), line: j.line() as u64, message: j.to_string() },
        other => other,
    })
}

/// Read a whole file, naming it in the error if that fails.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

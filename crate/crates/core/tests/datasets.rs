use std::path::Path;

use sma_proprio::detector::{sweep_tmax, SweepConfig};
use sma_proprio::estimators::{fit_contact_model, SignalSubset, SwitchingModel};
use sma_proprio::generate::{generate_contact, generate_nocontact, ContactPlan, NocontactPlan, Scale};
use sma_proprio::io::{
    dataset_to_string, parse_artifact, parse_dataset, read_dataset, validate_frames, write_artifact, write_dataset,
    Dataset, DatasetHeader, DatasetKind, FrameBounds,
};
use sma_proprio::plant::{PlantParams, SampleFrame};
use sma_proprio::safety::BabblerGains;
use sma_proprio::config::Config;
use sma_proprio::Error;

fn nocontact() -> Vec<SampleFrame> {
    generate_nocontact(&NocontactPlan::default(), &PlantParams::default(), BabblerGains::default()).unwrap()
}

fn contact_ci() -> (ContactPlan, Vec<SampleFrame>) {
    let plan = ContactPlan::scaled(Scale::Ci);
    let frames = generate_contact(&plan, &PlantParams::default(), BabblerGains::default()).unwrap();
    (plan, frames)
}

fn bounds(t_max: Option<f64>) -> FrameBounds {
    let p = PlantParams::default();
    FrameBounds { ambient: p.ambient, sigma_t: p.sigma_t, t_max }
}

#[test]
fn nocontact_covers_both_branches() {
    let frames = nocontact();
    assert_eq!(frames.len(), 600);
    validate_frames(&frames, &bounds(Some(NocontactPlan::default().t_max))).unwrap();
    assert!(frames.iter().all(|f| !f.contact && f.f_ext == 0.0));

    let split = Config::default().pose.split;
    let cold = frames.iter().filter(|f| split.is_cold(f.temperature, f.resistance)).count();
    assert!(cold >= 50 && frames.len() - cold >= 50, "cold {cold} of {}", frames.len());
}

#[test]
fn same_seed_same_bytes() {
    let header = DatasetHeader::new(DatasetKind::Nocontact, 1, 0.1, "h".into());
    let a = dataset_to_string(&Dataset { header: header.clone(), frames: nocontact() });
    let b = dataset_to_string(&Dataset { header, frames: nocontact() });
    assert_eq!(a, b);

    let other = NocontactPlan { seed: 9, ..Default::default() };
    let c = generate_nocontact(&other, &PlantParams::default(), BabblerGains::default()).unwrap();
    assert_ne!(c, nocontact());
}

#[test]
fn contact_grid_respects_every_cell() {
    let (plan, frames) = contact_ci();
    assert_eq!(frames.len(), plan.expected_rows());
    validate_frames(&frames, &bounds(Some(130.0))).unwrap();

    let per = plan.rows_per_cell();
    let p = PlantParams::default();
    let mut contact_rows = Vec::new();
    for (cell, ((d, t_max), rows)) in plan.cells().into_iter().zip(frames.chunks(per)).enumerate() {
        assert_eq!(rows.len(), per, "cell {cell}");
        validate_frames(rows, &bounds(Some(t_max))).unwrap_or_else(|e| panic!("cell {cell} ({d} mm, {t_max} °C): {e}"));
        let ceiling = t_max + 3.0 * p.sigma_t + 1e-9;
        assert!(rows.iter().all(|f| f.temperature <= ceiling));
        contact_rows.push(((d, t_max), rows.iter().filter(|f| f.contact).count()));
    }
    let at = |d: f64, t: f64| contact_rows.iter().find(|(c, _)| *c == (d, t)).unwrap().1;
    // A farther plate is harder to reach at the same temperature cap.
    assert!(at(50.0, 85.0) < at(20.0, 85.0), "{contact_rows:?}");
    assert!(at(20.0, 130.0) > 0);
    let total: usize = contact_rows.iter().map(|(_, n)| n).sum();
    assert!(total > frames.len() / 4 && total < frames.len(), "{total} contact rows");
}

#[test]
fn dataset_file_round_trip() {
    let (plan, frames) = contact_ci();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("contact.csv");
    let header = DatasetHeader::new(DatasetKind::Contact, plan.seed, plan.tick_s, "abc".into());
    let data = Dataset { header, frames };
    write_dataset(&path, &data).unwrap();
    let bytes = std::fs::read_to_string(&path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.frames, data.frames);
    assert_eq!(back.header, data.header);
    assert_eq!(dataset_to_string(&back), bytes);

    // Cut the file mid-row: the error names the broken line.
    let lines: Vec<&str> = bytes.lines().collect();
    let cut = lines.len() / 2;
    let mut truncated = lines[..cut].join("\n");
    truncated.push('\n');
    let partial = lines[cut].split(',').take(4).collect::<Vec<_>>().join(",");
    truncated.push_str(&partial);
    match parse_dataset(&truncated, Path::new("t.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line as usize, cut + 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn model_weights_survive_files() {
    let (_, frames) = contact_ci();
    let model = fit_contact_model(&frames, SignalSubset::RTTheta, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    write_artifact(&path, "contact_model", &model).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: sma_proprio::estimators::ContactModel = parse_artifact(&text, "contact_model").unwrap();
    assert_eq!(back, model);
    for f in frames.iter().step_by(97) {
        assert_eq!(back.predict(f).to_bits(), model.predict(f).to_bits());
    }
    assert!(matches!(parse_artifact::<SwitchingModel>(&text, "pose_model"), Err(Error::Domain(_))));
    let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(matches!(parse_artifact::<sma_proprio::estimators::ContactModel>(&future, "contact_model"), Err(Error::Schema { .. })));
}

/// Below the phase band, resistance and temperature each carry the same
/// information, so dropping one costs little.
#[test]
fn dropping_temperature_degrades_gracefully_when_cool() {
    let (_, frames) = contact_ci();
    let sweep = sweep_tmax(&frames, &SignalSubset::ALL, &SweepConfig::default()).unwrap();
    let cool: Vec<_> = sweep.entries.iter().filter(|e| e.t_max < 90.0 + 1e-9).collect();
    assert!(!cool.is_empty(), "no evaluated bucket at or below 90 °C");
    for e in cool {
        let r = e.error(SignalSubset::RTheta).unwrap();
        let t = e.error(SignalSubset::TTheta).unwrap();
        assert!(r <= 2.0 * t && t <= 2.0 * r, "T ≤ {}: R,θ {r} vs T,θ {t}", e.t_max);
    }
}

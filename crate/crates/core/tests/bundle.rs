use std::fs;

use tsmor_core::bundle::{self, MANIFEST};
use tsmor_core::config::RunConfig;
use tsmor_core::gpr::TrainOptions;
use tsmor_core::hf::{tensor_samples, TestCase};
use tsmor_core::pipeline::{run_offline, Mode, OfflineArtifacts, OfflineConfig};
use tsmor_core::{Error, ErrorKind};

fn heat(seed: u64, mode: Mode) -> OfflineArtifacts {
    let test = TestCase::heat2d(16).unwrap();
    let mut cfg = OfflineConfig::new(&test, 2, 2);
    cfg.n_max = 3;
    cfg.n_psi_max = 3;
    cfg.mode = mode;
    cfg.registration.max_m = 3;
    cfg.gpr = TrainOptions {
        restarts: 2,
        seed,
        ..TrainOptions::default()
    };
    run_offline(&test, tensor_samples(&test.bounds, &[5]).unwrap(), &cfg).unwrap()
}

#[test]
fn round_trip_reproduces_online_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b");
    let art = heat(3, Mode::Tsmor);
    let written = bundle::save(&art, &path, serde_json::json!({"note": "test"})).unwrap();
    let (back, manifest) = bundle::load(&path).unwrap();
    assert_eq!(written, manifest);
    assert_eq!(manifest.registration.as_ref().unwrap().m, art.registration.as_ref().unwrap().m);
    for z in [-0.05, -0.012, 0.0, 0.033] {
        let a = art.run_online(&[z]).unwrap();
        let b = back.run_online(&[z]).unwrap();
        assert_eq!(a.fields, b.fields, "z = {z}");
        assert_eq!(a.predicted_error, b.predicted_error);
        assert_eq!(a.extrapolated, b.extrapolated);
    }
    assert_eq!(art.projection_errors(2), back.projection_errors(2));
    // no staging directory is left next to the bundle
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn same_seed_gives_identical_payload_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let a = bundle::save(&heat(9, Mode::Tsmor), &dir.path().join("a"), serde_json::Value::Null).unwrap();
    let b = bundle::save(&heat(9, Mode::Tsmor), &dir.path().join("b"), serde_json::Value::Null).unwrap();
    assert_eq!(a.payload_hashes(), b.payload_hashes());
    assert_eq!(a.config_sha256, b.config_sha256);
    for p in &a.payloads {
        assert_eq!(fs::read(dir.path().join("a").join(&p.file)).unwrap(), fs::read(dir.path().join("b").join(&p.file)).unwrap());
    }
}

#[test]
fn identity_bundle_has_no_registration_payload() {
    let dir = tempfile::tempdir().unwrap();
    let m = bundle::save(&heat(1, Mode::Identity), &dir.path().join("b"), serde_json::Value::Null).unwrap();
    assert_eq!(m.mode, Mode::Identity);
    assert!(m.registration.is_none() && m.n_psi.is_none());
    assert!(m.payloads.iter().all(|p| !p.name.starts_with("registration") && !p.name.starts_with("psi")));
    let text = fs::read_to_string(dir.path().join("b").join(MANIFEST)).unwrap();
    assert!(text.contains("\"mode\": \"identity\""));
    bundle::load(&dir.path().join("b")).unwrap();
}

#[test]
fn tampered_or_missing_payloads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b");
    let m = bundle::save(&heat(2, Mode::Tsmor), &path, serde_json::Value::Null).unwrap();
    let victim = path.join(&m.payloads[1].file);
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0] ^= 1;
    fs::write(&victim, &bytes).unwrap();
    let err = bundle::load(&path).unwrap_err();
    assert!(matches!(err, Error::Bundle { .. }) && err.kind() == ErrorKind::Io, "{err}");
    fs::remove_file(&victim).unwrap();
    assert!(bundle::load(&path).is_err());
    assert!(bundle::load(&dir.path().join("absent")).is_err());
}

#[test]
fn saving_over_an_existing_bundle_replaces_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b");
    fs::create_dir_all(&path).unwrap();
    fs::write(path.join("stale.f64"), b"x").unwrap();
    bundle::save(&heat(4, Mode::Identity), &path, serde_json::Value::Null).unwrap();
    assert!(!path.join("stale.f64").exists());
    assert!(path.join(MANIFEST).exists());
}

#[test]
fn checked_in_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

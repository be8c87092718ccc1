//! FSIM against stored reference scores. `fixtures/fsim/make_fixtures.py`
//! regenerates the images and `expected.json`.

use std::path::PathBuf;

use afh_core::image::read_png;
use afh_core::metrics::fsim;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    a: String,
    b: String,
    fsim: f64,
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fsim")
}

fn cases() -> Vec<Case> {
    let text = std::fs::read_to_string(fixture_dir().join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn matches_reference_scores() {
    let cases = cases();
    assert_eq!(cases.len(), 5);
    for c in &cases {
        let a = read_png(fixture_dir().join(&c.a)).unwrap();
        let b = read_png(fixture_dir().join(&c.b)).unwrap();
        let got = fsim(&a, &b).unwrap();
        assert!(
            (got - c.fsim).abs() < 1e-4,
            "{} vs {}: got {got}, expected {}",
            c.a,
            c.b,
            c.fsim
        );
    }
}

#[test]
fn symmetric_and_bounded() {
    for c in &cases() {
        let a = read_png(fixture_dir().join(&c.a)).unwrap();
        let b = read_png(fixture_dir().join(&c.b)).unwrap();
        let ab = fsim(&a, &b).unwrap();
        let ba = fsim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!(ab > 0.0 && ab < 1.0);
        assert!((fsim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }
}

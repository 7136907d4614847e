//! Replays the checked-in fuzz seeds through the same assertions as the fuzz
//! targets, and pins the shipped demonstration dataset.

use std::fs;
use std::path::{Path, PathBuf};

use freqact::checkpoint::Checkpoint;
use freqact::config::RunConfig;
use freqact::env::{generate_demos, Dataset, EnvKind, Manifest};
use freqact::trajectory::{
    parse_band_table_csv, parse_spectrum_csv, parse_trajectory_csv, render_band_table_csv, render_spectrum_csv,
    render_trajectory_csv,
};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(target: &str) -> Vec<(PathBuf, String)> {
    seeds(target)
        .into_iter()
        .map(|(p, b)| (p, String::from_utf8(b).expect("text seed")))
        .collect()
}

#[test]
fn trajectory_seeds_round_trip() {
    let mut accepted = 0;
    for (p, t) in text("trajectory_csv") {
        if let Ok(x) = parse_trajectory_csv("seed", &t) {
            let again = parse_trajectory_csv("seed", &render_trajectory_csv(&x)).unwrap();
            assert_eq!(again.values(), x.values(), "{}", p.display());
            accepted += 1;
        }
    }
    assert!(accepted >= 3);
    let nan = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/trajectory_csv/nan.csv"))
        .unwrap();
    assert!(parse_trajectory_csv("nan", &nan).is_err());
}

#[test]
fn spectrum_seeds_round_trip() {
    for (p, t) in text("spectrum_csv") {
        let s = parse_spectrum_csv("seed", &t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let again = parse_spectrum_csv("seed", &render_spectrum_csv(&s)).unwrap();
        assert_eq!(again.coeffs(), s.coeffs());
    }
}

#[test]
fn band_table_seeds_round_trip() {
    for (p, t) in text("band_table_csv") {
        let b = parse_band_table_csv("seed", &t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_band_table_csv("seed", &render_band_table_csv(&b)).unwrap(), b);
    }
}

#[test]
fn config_seeds_round_trip() {
    for (p, t) in text("run_config") {
        let c = RunConfig::parse("seed", &t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(RunConfig::parse("seed", &c.render()).unwrap(), c);
        c.validate().unwrap();
    }
}

#[test]
fn manifest_seeds_round_trip() {
    for (p, t) in text("manifest") {
        let m = Manifest::parse("seed", &t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(Manifest::parse("seed", &m.render()).unwrap(), m);
    }
}

#[test]
fn checkpoint_seeds_decode_and_re_encode() {
    for (p, b) in seeds("checkpoint") {
        let ck = Checkpoint::decode(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(ck.encode(), b);
        ck.run_config().unwrap();
        ck.model().unwrap();
        // every single-byte corruption is caught without a panic
        for i in (0..b.len()).step_by(97) {
            let mut bad = b.clone();
            bad[i] ^= 0x5a;
            assert!(Checkpoint::decode(&bad).is_err(), "flip at {i} accepted");
        }
        assert!(Checkpoint::decode(&b[..b.len() / 2]).is_err());
    }
}

#[test]
fn shipped_dataset_is_the_seeded_expert_output() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reach2d_expert");
    let shipped = Dataset::read(&dir).unwrap();
    assert_eq!(shipped.demos.len(), 64);
    let fresh = generate_demos(EnvKind::Reach2d, 64, 0.0, 0).unwrap();
    assert_eq!(shipped.demos, fresh);
}

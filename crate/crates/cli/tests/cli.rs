use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use freqact::trajectory::{parse_spectrum_csv, parse_trajectory_csv, render_trajectory_csv, Trajectory};

const TOY: &str = "\
policy.encoder_embed_dim = 16
policy.decoder_embed_dim = 16
policy.encoder_num_heads = 2
policy.decoder_num_heads = 2
policy.encoder_depth = 1
policy.decoder_depth = 1
policy.state_mlp_size = 8
policy.mlp_ratio = 2
policy.diffloss_d = 1
policy.diffloss_w = 16
train.batchsize = 4
train.steps = 16
train.checkpoint_every = 8
train.log_every = 8
data.episodes = 4
eval.episodes = 3
eval.seeds = 2
bench.episodes = 2
";

fn freqact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqact"))
        .current_dir(dir)
        .env("FREQACT_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = freqact(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    freqact(dir, args).status.code().expect("exit code")
}

/// Tiny dataset and a checkpoint trained on it.
fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("toy.cfg"), TOY).unwrap();
    ok(d, &["demos", "--config", "toy.cfg", "--out", "data"]);
    ok(d, &["train", "--config", "toy.cfg", "--data", "data", "--out", "train"]);
    dir
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "provenance.txt")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["demos", "--set", "nope.key=1", "--out", "x"]), 2);
    assert_eq!(code(d, &["demos", "--set", "data.episodes=0", "--out", "x"]), 2);
    fs::write(d.join("bad.cfg"), "policy.horizon = 16\npolicy.horizon = 8\n").unwrap();
    assert_eq!(code(d, &["demos", "--config", "bad.cfg", "--out", "x"]), 2);
    assert_eq!(code(d, &["demos", "--config", "absent.cfg", "--out", "x"]), 2);
    fs::write(d.join("junk.bin"), b"FQACKPT\0\x01\0\0\0garbage").unwrap();
    let out = freqact(d, &["eval", "--checkpoint", "junk.bin", "--out", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte offset"));
    assert_eq!(code(d, &["analyze", "--data", "missing", "--out", "x"]), 3);
    let threads = Command::new(env!("CARGO_BIN_EXE_freqact"))
        .current_dir(d)
        .env("FREQACT_THREADS", "zero")
        .args(["demos", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn every_output_directory_carries_provenance() {
    let dir = trained();
    let d = dir.path();
    for sub in ["data", "train"] {
        let prov = fs::read_to_string(d.join(sub).join("provenance.txt")).unwrap();
        assert!(prov.contains("commit = ") && prov.contains("seed = 0"), "{prov}");
        let cfg = fs::read_to_string(d.join(sub).join("config.txt")).unwrap();
        assert!(cfg.contains("policy.encoder_embed_dim = 16"), "{cfg}");
    }
    let loss = fs::read_to_string(d.join("train/loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,loss,lr"));
    assert_eq!(loss.lines().count(), 17);
    assert!(loss.lines().skip(1).all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let dir = trained();
    let d = dir.path();
    ok(d, &["train", "--config", "toy.cfg", "--data", "data", "--out", "half", "--until", "8"]);
    ok(d, &["train", "--data", "data", "--out", "half", "--resume", "half/ckpt_000008.bin"]);
    let straight = fs::read(d.join("train/checkpoint.bin")).unwrap();
    let resumed = fs::read(d.join("half/checkpoint.bin")).unwrap();
    assert!(straight == resumed, "checkpoints differ");
    assert_eq!(
        fs::read_to_string(d.join("train/loss.csv")).unwrap(),
        fs::read_to_string(d.join("half/loss.csv")).unwrap()
    );
    // a resumed run may not change the recorded configuration
    assert_eq!(
        code(d, &["train", "--data", "data", "--out", "h2", "--resume", "half/ckpt_000008.bin", "--set", "train.steps=99"]),
        2
    );
}

#[test]
fn eval_and_sample_are_reproducible() {
    let dir = trained();
    let d = dir.path();
    let ck = "train/checkpoint.bin";
    ok(d, &["eval", "--checkpoint", ck, "--out", "e1"]);
    ok(d, &["eval", "--checkpoint", ck, "--out", "e2"]);
    assert_eq!(read_dir_sorted(&d.join("e1")), read_dir_sorted(&d.join("e2")));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("e1/report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert_eq!(report["reports"][0]["episodes"].as_array().unwrap().len(), 3);

    let obs = Trajectory::new(2, 6, vec![0.1, 0.2, 0.0, 0.0, 0.5, -0.4, 0.1, 0.2, 0.0, 0.0, 0.5, -0.4]).unwrap();
    fs::write(d.join("obs.csv"), render_trajectory_csv(&obs)).unwrap();
    ok(d, &["sample", "--checkpoint", ck, "--obs", "obs.csv", "--out", "s1"]);
    ok(d, &["sample", "--checkpoint", ck, "--obs", "obs.csv", "--out", "s2"]);
    assert_eq!(read_dir_sorted(&d.join("s1")), read_dir_sorted(&d.join("s2")));

    let levels = [0, 4, 8, 12];
    for (i, &l) in levels.iter().enumerate() {
        let text = fs::read_to_string(d.join(format!("s1/iter{i}_spectrum.csv"))).unwrap();
        let spec = parse_spectrum_csv("dump", &text).unwrap();
        assert_eq!(spec.horizon(), 16);
        let scale = spec.coeffs().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for row in l..16 {
            for v in spec.row(row) {
                assert!(v.abs() <= 1e-9 * scale, "iteration {i} row {row}: {v}");
            }
        }
    }
    let actions = parse_trajectory_csv("a", &fs::read_to_string(d.join("s1/actions.csv")).unwrap()).unwrap();
    assert_eq!((actions.horizon(), actions.dim()), (16, 2));

    let wrong = Trajectory::new(1, 6, vec![0.0; 6]).unwrap();
    fs::write(d.join("short.csv"), render_trajectory_csv(&wrong)).unwrap();
    assert_eq!(code(d, &["sample", "--checkpoint", ck, "--obs", "short.csv", "--out", "s3"]), 3);
}

#[test]
fn bench_emits_the_pareto_schema() {
    let dir = trained();
    let d = dir.path();
    ok(d, &["bench", "--checkpoint", "train/checkpoint.bin", "--out", "b"]);
    let csv = fs::read_to_string(d.join("b/pareto.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n_iter,nfe,wall_ms_mean,success_rate"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    let n_iter: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(n_iter, ["1", "2", "4", "8"]);
    let nfe: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(nfe, [10, 20, 40, 80]);
    assert_eq!(nfe[0] * 4, nfe[2]);
    let records = fs::read_to_string(d.join("b/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 8);
    assert!(d.join("b/pareto.svg").exists());
}

#[test]
fn constant_actions_fill_only_the_lowest_band() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("toy.cfg"), TOY).unwrap();
    ok(d, &["demos", "--config", "toy.cfg", "--out", "data"]);
    for i in 0..4 {
        let p = d.join(format!("data/episode_{i:04}/actions.csv"));
        let t = parse_trajectory_csv("a", &fs::read_to_string(&p).unwrap()).unwrap();
        let c = Trajectory::new(t.horizon(), 2, [0.3, -0.2].repeat(t.horizon())).unwrap();
        fs::write(&p, render_trajectory_csv(&c)).unwrap();
    }
    ok(d, &["analyze", "--data", "data", "--out", "an"]);
    let table = fs::read_to_string(d.join("an/band_energy.csv")).unwrap();
    for line in table.lines().skip(1) {
        let vals: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        // higher bands hold only cosine-sum roundoff
        assert!((vals[0] - 1.0).abs() < 1e-12, "{line}");
        assert!(vals[1..].iter().all(|v| *v < 1e-12), "{line}");
    }
    let svg = fs::read_to_string(d.join("an/band_energy.svg")).unwrap();
    assert_eq!(svg.matches("rgb(0,0,255)").count(), 2);
    for f in ["energy_curve.csv", "compression.csv", "reconstruction_0.5.csv", "reconstruction_dim0.svg"] {
        assert!(d.join("an").join(f).exists(), "{f}");
    }
}

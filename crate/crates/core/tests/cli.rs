//! End-to-end checks of the `coaffect` binary.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
stimuli_per_emotion = 1
vision_dim = 6
audio_dim = 5
intero_frames = 4
ou_steps = 40
hidden_dim = 8
latent_dim = 3
k = 4
rounds = 2
epochs = 1
batch_size = 16
";

fn coaffect(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coaffect"));
    cmd.args(args);
    if let Some(c) = cfg {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn gen_data_writes_448_rows_per_agent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let o = coaffect(&["gen-data", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for agent in ["a", "b"] {
        for m in ["vision", "audio", "interoception"] {
            let text = std::fs::read_to_string(out.join(format!("agent_{agent}_{m}.csv"))).unwrap();
            assert_eq!(text.lines().count(), 1 + 448, "agent_{agent}_{m}.csv");
        }
    }
}

#[test]
fn invalid_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "k = 0\n").unwrap();
    let o = coaffect(&["run", "--out", tmp.path().join("r").to_str().unwrap()], Some(&bad));
    assert!(!o.status.success());
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let o = coaffect(&["run", "--out", tmp.path().join("r").to_str().unwrap()], Some(&bad));
    assert!(!o.status.success());
}

#[test]
fn run_plot_and_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let runs = tmp.path().join("runs");
    let run = runs.join("one");
    let o = coaffect(&["run", "--seed", "3", "--scenario", "reject", "--out", run.to_str().unwrap()], Some(&cfg));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "metrics.csv", "checkpoint.json", "events.jsonl"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
    assert!(metrics.lines().nth(1).unwrap().starts_with("3,original_original,always_reject,0,"));

    let o = coaffect(&["plot", "--checkpoint", run.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["heatmap_a.svg", "heatmap_b.svg", "pca_a.svg", "pca_b.svg"] {
        assert!(std::fs::read_to_string(run.join(f)).unwrap().starts_with("<svg"));
    }

    let o = coaffect(&["report", "--out", runs.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(runs.join("summary.csv").is_file() && runs.join("summary.json").is_file());

    std::fs::remove_file(run.join("events.jsonl")).unwrap();
    let o = coaffect(&["report", "--out", runs.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("events.jsonl"));
}

#[test]
fn sweep_summarizes_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = coaffect(
        &["sweep", "--seeds", "0-1", "--scenarios", "mh,reject", "--conditions", "original_original,vision_audio", "--workers", "2", "--out", out.to_str().unwrap()],
        Some(&cfg),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    assert!(out.join("vision_audio/always_reject/seed-1/metrics.csv").is_file());
}

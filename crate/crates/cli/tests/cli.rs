use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[train]
epochs = 1
batch_size = 2

[eval]
windows_ms = [5, 10]
prefixes_ms = [5]

[dataset]
val_duration_ms = 20

[dataset.scene]
width = 32
height = 32
duration_ms = 40

[[dataset.scene.objects]]
size_px = 10.0
start = [10.0, 12.0]
"#;

fn spikeseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let common = |cmd: &str, target: &Path| {
        let o = spikeseg(&[cmd, "--seed", "3", "--config", p(&cfg), "--out", p(target), "--data", p(&data)]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(common("datagen", &data).contains("2 sequences"));
    assert!(data.join("manifest.json").is_file());
    assert!(common("train", &out).contains("best validation IoU"));
    assert!(out.join("checkpoint.spks").is_file());
    assert_eq!(common("eval", &out).lines().count(), 2);
    assert!(common("incremental", &out).contains("prefix  5 ms"));
    assert!(common("cost", &out).contains("energy benefit"));
    assert!(common("validate", &out).contains("checks passed"));
}

#[test]
fn seed_is_mandatory() {
    let o = spikeseg(&["train", "--config", "x.toml", "--out", "o"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[train]\nepochz = 3\n").unwrap();
    let o = spikeseg(&["train", "--seed", "1", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_spikeseg"))
        .args(["validate", "--seed", "1", "--config", "none.toml", "--out", "o"])
        .env("SPIKESEG_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

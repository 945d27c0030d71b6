//! End-to-end checks of the `selu` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn selu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selu")).args(args).output().expect("binary runs")
}

fn stderr_value(out: &Output, key: &str) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no `{key}` in stderr:\n{err}"))
        .trim()
        .to_string()
}

fn run_smoke(out: &Path, extra: &[&str]) -> (PathBuf, String) {
    let cfg = config("smoke.toml");
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = selu(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (PathBuf::from(stderr_value(&o, "run directory:")), stderr_value(&o, "manifest sha256:"))
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn runs_are_reproducible_and_exportable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, sha_a) = run_smoke(tmp.path(), &[]);
    let (b, sha_b) = run_smoke(tmp.path(), &[]);
    assert_eq!(sha_a, sha_b);
    assert_ne!(a, b, "a second run must not overwrite the first");
    assert!(b.file_name().unwrap().to_str().unwrap().ends_with("-2"));

    let out = tmp.path().join("export");
    let o = selu(&["export-dataset", "--run", a.to_str().unwrap(), "--out", out.to_str().unwrap(), "--split", "0.9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let total_a = lines(&a.join("iter_1/d_actor.jsonl"));
    let (train, hold) = (lines(&out.join("d_actor.train.jsonl")), lines(&out.join("d_actor.holdout.jsonl")));
    assert_eq!(train + hold, total_a);
    assert_eq!(train, (total_a as f64 * 0.9).round() as usize);
    let total_c = lines(&a.join("iter_1/d_critic.jsonl"));
    assert_eq!(lines(&out.join("d_critic.train.jsonl")) + lines(&out.join("d_critic.holdout.jsonl")), total_c);

    // Unsplit export reproduces the run's files byte for byte.
    let whole = tmp.path().join("whole");
    assert!(selu(&["export-dataset", "--run", a.to_str().unwrap(), "--out", whole.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(whole.join("d_actor.jsonl")).unwrap(), fs::read(a.join("iter_1/d_actor.jsonl")).unwrap());

    let o = selu(&["replay", "--archive", a.join("iter_1/trajectories.jsonl").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = selu(&["report", "--run", a.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["variant"], "selu");
}

#[test]
fn variant_and_seed_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = run_smoke(tmp.path(), &["--variant", "wo_critic", "--seed", "9"]);
    assert_eq!(dir.file_name().unwrap(), "wo_critic-seed9");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((m["variant"].as_str(), m["seed"].as_u64()), (Some("wo_critic"), Some(9)));

    let (dg, _) = run_smoke(tmp.path(), &["--variant", "dg"]);
    let out = tmp.path().join("none");
    let o = selu(&["export-dataset", "--run", dg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn tampered_archives_fail_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = run_smoke(tmp.path(), &[]);
    let archive = dir.join("iter_1/trajectories.jsonl");
    let text = fs::read_to_string(&archive).unwrap();
    // Swap one recorded rotation for the opposite one.
    let tampered = text.replacen("\"action\":\"RotateLeft\"", "\"action\":\"RotateRight\"", 1);
    assert_ne!(tampered, text);
    fs::write(&archive, tampered).unwrap();
    assert_eq!(selu(&["replay", "--archive", archive.to_str().unwrap()]).status.code(), Some(5));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(selu(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(selu(&["report", "--run", tmp.path().join("nope").to_str().unwrap()]).status.code(), Some(4));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, fs::read_to_string(config("smoke.toml")).unwrap().replace("seed = 1", "seed = 1\nhorizon = 0")).unwrap();
    let o = selu(&["evaluate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // Nothing listens on port 9: connectivity failure.
    let remote = tmp.path().join("remote.toml");
    let text = fs::read_to_string(config("remote.toml")).unwrap().replace("127.0.0.1:8080", "127.0.0.1:9");
    let scene = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/scenes/kitchen.toml");
    let text = text.replace("../assets/scenes/kitchen.toml", scene.to_str().unwrap());
    fs::write(&remote, text).unwrap();
    let o = selu(&["evaluate", "--config", remote.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

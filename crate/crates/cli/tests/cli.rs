use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn comerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comerge")).args(args).output().unwrap()
}

fn json_stdout(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn short_config(dir: &Path) -> String {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "[scenario]\n\n[run]\nseed = 3\nhorizon = 60\n").unwrap();
    cfg.to_str().unwrap().to_owned()
}

#[test]
fn run_then_replay_and_reflect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let run = json_stdout(&comerge(&["run", "--config", &cfg, "--out", path(dir.path())]));
    assert_eq!(run["ticks"], 60);
    let trace = run["trace"].as_str().unwrap().to_owned();
    assert!(trace.ends_with("trace-seed3.jsonl"));

    let again = json_stdout(&comerge(&["run", "--config", &cfg, "--out", path(&dir.path().join("b"))]));
    assert_eq!(again["digest"], run["digest"]);

    let replay = json_stdout(&comerge(&["replay", "--trace", &trace]));
    assert_eq!(replay["canonical"], true);
    assert_eq!(replay["metrics"], run["metrics"]);

    let out = dir.path().join("records.jsonl");
    let reflect = json_stdout(&comerge(&["reflect", "--trace", &trace, "--out", path(&out)]));
    let n = reflect["records"].as_u64().unwrap() as usize;
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), n);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let run = json_stdout(&comerge(&["run", "--config", &cfg, "--seed", "11", "--out", path(dir.path())]));
    assert!(run["trace"].as_str().unwrap().ends_with("trace-seed11.jsonl"));
}

#[test]
fn eval_scores_constant_velocity_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tracks.csv");
    let mut s = String::from("id,frame,x,y,vx,vy\n");
    for id in 0..2 {
        for f in 0..120 {
            let y = -1.75 - 3.5 * id as f64;
            let _ = writeln!(s, "{id},{f},{},{y},12,0", 12.0 * f as f64 / 10.0 + 30.0 * id as f64);
        }
    }
    std::fs::write(&csv, s).unwrap();
    let out = comerge(&["eval", "--dataset", path(&csv), "--predictor", "const-vel"]);
    let v = json_stdout(&out);
    assert_eq!(v["report"]["pairs"], 2);
    assert!(v["report"]["rmse_avg"].as_f64().unwrap() < 1e-9);
    assert!(String::from_utf8_lossy(&out.stderr).contains("| predictor |"));
}

#[test]
fn failures_exit_nonzero_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nbogus = 1\n").unwrap();
    for args in [
        vec!["run", "--config", path(&bad), "--out", path(dir.path())],
        vec!["replay", "--trace", "/nonexistent/trace.jsonl"],
        vec!["eval", "--dataset", "/nonexistent.csv", "--predictor", "echo"],
    ] {
        let out = comerge(&args);
        assert!(!out.status.success(), "{args:?}");
        let line = String::from_utf8_lossy(&out.stderr);
        let err: Value = serde_json::from_str(line.trim()).unwrap();
        assert!(err["error"].is_string() && err["kind"].is_string(), "{line}");
    }
}

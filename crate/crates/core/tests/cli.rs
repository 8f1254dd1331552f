use std::path::Path;
use std::process::{Command, Output};

mod common;

fn lithoroute(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lithoroute"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stages_run_in_order_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let synth = lithoroute(&["synth", "--out", "table.csv", "--wells", "4", "--samples", "80", "--seed", "11"], dir);
    assert!(synth.status.success(), "{}", stderr(&synth));
    common::synthetic_config(dir, 80, "");

    let early = lithoroute(&["--config", "pipeline.toml", "classify"], dir);
    assert!(!early.status.success());
    let msg = stderr(&early);
    assert_eq!(msg.lines().count(), 1, "{msg}");
    assert!(msg.starts_with("error[missing-artifact]:") && msg.contains("`ingest`"), "{msg}");

    for cmd in ["ingest", "train-base", "calibrate", "classify", "evaluate"] {
        let out = lithoroute(&["--config", "pipeline.toml", cmd], dir);
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    let eval = lithoroute(&["--config", "pipeline.toml", "evaluate"], dir);
    assert!(String::from_utf8_lossy(&eval.stdout).starts_with("f1 "));

    // overrides land in a separate output root with a different seed
    let other = lithoroute(&["--config", "pipeline.toml", "--seed", "3", "--run-dir", "elsewhere", "run"], dir);
    assert!(other.status.success(), "{}", stderr(&other));
    assert!(dir.join("elsewhere").read_dir().unwrap().count() >= 3);
}

#[test]
fn usage_errors_are_single_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lithoroute(&["ingest"], tmp.path());
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error[config]:"));

    std::fs::write(tmp.path().join("bad.toml"), "[data]\ntable = \"t\"\ncolumns = \"c\"\nsurprise = 1\n").unwrap();
    let out = lithoroute(&["--config", "bad.toml", "ingest"], tmp.path());
    let msg = stderr(&out);
    assert!(msg.starts_with("error[config]:") && msg.lines().count() == 1, "{msg}");
}

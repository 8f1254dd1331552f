mod common;

use std::collections::BTreeSet;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lithoroute::pipeline::{
    self, cmd_calibrate, cmd_classify_with, cmd_evaluate, cmd_ingest, cmd_sweep, cmd_train_base, read_audit,
    run_pipeline_with, ClassifySummary, RunManifest,
};
use lithoroute::reasoning::{CompletionRequest, MockBackend, ReasonerBackend};
use lithoroute::refine::flying_point_ratio;
use lithoroute::Error;

fn summary(dir: &std::path::Path) -> ClassifySummary {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn rows(dir: &std::path::Path) -> Vec<pipeline::AuditRow> {
    pipeline::audit_files(dir)
        .unwrap()
        .iter()
        .flat_map(|f| read_audit(f).unwrap())
        .collect()
}

#[test]
fn zero_threshold_without_tools_is_the_base_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(
        tmp.path(),
        100,
        "[routing]\ntau = 0.0\n[tools]\nknowledge = false\ntrend = false\nneighbors = false\nhistory = false\n",
    );
    let panic_backend = |_: &CompletionRequest| -> lithoroute::Result<String> { panic!("backend must not be called") };
    let run = run_pipeline_with(&cfg, &panic_backend).unwrap();
    let rows = rows(&run.classify_dir);
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| r.final_label == r.base_label && r.verdict == "base" && r.method == "base"));
    let s = summary(&run.classify_dir);
    assert_eq!((s.counts.routed_windows, s.counts.accepted_windows, s.backend_queries), (0, 25, 0));
    assert_eq!(run.report.coverage, 1.0);
}

#[test]
fn full_threshold_routes_every_window() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(tmp.path(), 100, "[routing]\ntau = 1.0\n");
    let run = run_pipeline_with(&cfg, &MockBackend).unwrap();
    let s = summary(&run.classify_dir);
    assert_eq!((s.counts.routed_windows, s.counts.accepted_windows), (25, 0));
    assert_eq!(run.report.coverage, 0.0);
    let manifest = RunManifest::load(&run.classify_dir).unwrap();
    assert_eq!(manifest.tau, Some(1.0));
    assert_eq!(manifest.verdicts, Some(s.counts));
    let decisions = fs::read_to_string(run.classify_dir.join("decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count(), 25);
}

/// Mock replies until `budget` calls have been made, then fails.
struct Flaky {
    budget: usize,
    calls: AtomicUsize,
    keys: Mutex<Vec<String>>,
}

impl ReasonerBackend for Flaky {
    fn complete(&self, r: &CompletionRequest) -> lithoroute::Result<String> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(Error::Backend("connection refused".into()));
        }
        self.keys.lock().unwrap().push(r.key());
        MockBackend.complete(r)
    }
}

#[test]
fn interrupted_classify_resumes_without_requerying() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(tmp.path(), 100, "[routing]\ntau = 1.0\n");
    cmd_ingest(&cfg).unwrap();
    cmd_train_base(&cfg).unwrap();

    let first = Flaky { budget: 40, calls: AtomicUsize::new(0), keys: Mutex::new(Vec::new()) };
    let err = cmd_classify_with(&cfg, &first).unwrap_err();
    assert_eq!(err.class(), "backend");
    let dir = pipeline::classify_dir(&cfg).unwrap();
    assert!(dir.join("RESUME").exists());
    assert!(!dir.join("COMPLETE").exists());
    let manifest_before = fs::read(dir.join("manifest.json")).unwrap();

    let second = Flaky { budget: usize::MAX, calls: AtomicUsize::new(0), keys: Mutex::new(Vec::new()) };
    let out = cmd_classify_with(&cfg, &second).unwrap();
    assert_eq!(out, dir);
    let before: BTreeSet<String> = first.keys.lock().unwrap().iter().cloned().collect();
    let after = second.keys.lock().unwrap();
    assert_eq!(before.len(), 40);
    assert!(after.iter().all(|k| !before.contains(k)), "a journalled completion was requested again");
    let s = summary(&dir);
    assert_eq!((s.replayed, s.backend_queries), (40, after.len()));
    assert!(!dir.join("RESUME").exists());
    assert_eq!(fs::read(dir.join("manifest.json")).unwrap(), manifest_before);
    let logged = fs::read_to_string(dir.join("completions.jsonl")).unwrap();
    assert_eq!(logged.lines().count(), 40 + after.len());

    // the resumed result equals an uninterrupted run
    let mut clean = cfg.clone();
    clean.output_root = tmp.path().join("clean");
    let reference = run_pipeline_with(&clean, &MockBackend).unwrap();
    assert_eq!(common::audits(&dir), common::audits(&reference.classify_dir));
}

#[test]
fn downstream_commands_name_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(tmp.path(), 60, "");
    let need = |r: lithoroute::Result<_>| match r {
        Err(Error::MissingArtifact { command, .. }) => command,
        other => panic!("expected a missing artifact, got {other:?}"),
    };
    assert_eq!(need(cmd_calibrate(&cfg).map(|_| ())), "ingest");
    cmd_ingest(&cfg).unwrap();
    assert_eq!(need(cmd_calibrate(&cfg).map(|_| ())), "train-base");
    cmd_train_base(&cfg).unwrap();
    assert_eq!(need(cmd_classify_with(&cfg, &MockBackend).map(|_| ())), "calibrate");
    assert_eq!(need(cmd_evaluate(&cfg, &[]).map(|_| ())), "classify");
    cmd_calibrate(&cfg).unwrap();
    cmd_classify_with(&cfg, &MockBackend).unwrap();
    assert!(cmd_evaluate(&cfg, &[]).is_ok());
}

#[test]
fn changed_config_never_overwrites() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(tmp.path(), 80, "[routing]\ntau = 0.9\n");
    let a = run_pipeline_with(&cfg, &MockBackend).unwrap();
    let before = common::audits(&a.classify_dir);
    let other = cfg.with_override("tools.history", "false").unwrap();
    let b = run_pipeline_with(&other, &MockBackend).unwrap();
    assert_ne!(a.classify_dir, b.classify_dir);
    assert_eq!(common::audits(&a.classify_dir), before);
    // rerunning a finished stage is a no-op
    let again = run_pipeline_with(&cfg, &MockBackend).unwrap();
    assert_eq!(again.classify_dir, a.classify_dir);
    assert_eq!(again.report, a.report);
}

#[test]
fn refinement_never_adds_flying_points() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(tmp.path(), 200, "[routing]\ntau = 1.0\n");
    let with = run_pipeline_with(&cfg, &MockBackend).unwrap();
    let without = run_pipeline_with(&cfg.with_override("refinement.enabled", "false").unwrap(), &MockBackend).unwrap();
    assert!(with.report.flying_point_ratio <= without.report.flying_point_ratio);
    let names = summary(&with.classify_dir).class_names;
    let ids: Vec<usize> = rows(&with.classify_dir)
        .iter()
        .map(|r| names.iter().position(|n| *n == r.final_label).unwrap())
        .collect();
    // every depth is routed, so whole-well smoothing leaves no isolated labels
    assert_eq!(flying_point_ratio(&ids), 0.0);
}

#[test]
fn llm_refinement_with_mock_backend() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(
        tmp.path(),
        80,
        "[routing]\ntau = 1.0\n[refinement]\nmethod = \"llm\"\nscope = \"window\"\n",
    );
    let run = run_pipeline_with(&cfg, &MockBackend).unwrap();
    let methods: BTreeSet<String> = rows(&run.classify_dir).into_iter().map(|r| r.method).collect();
    let allowed: BTreeSet<String> = ["llm", "unanimous", "deterministic"].map(String::from).into();
    assert!(methods.is_subset(&allowed), "{methods:?}");
}

#[test]
fn sweep_and_comparison_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(tmp.path(), 80, "");
    let values: Vec<String> = ["0.0", "0.6", "1.0"].map(String::from).into();
    let path = cmd_sweep(&cfg, "routing.tau", &values).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("value,coverage,f1"));
    let coverage: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(coverage.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!((coverage[0], coverage[2]), (1.0, 0.0));

    let dirs: Vec<_> = lines[1..]
        .iter()
        .map(|l| cfg.output_root.join(l.rsplit(',').next().unwrap()))
        .collect();
    let base = cfg.with_override("routing.tau", "0.6").unwrap();
    let (own, _) = cmd_evaluate(&base, &[dirs[0].clone(), dirs[2].clone()]).unwrap();
    let table = fs::read_to_string(own.join("comparison.txt")).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains("classify-")).count(), 3, "{table}");
}

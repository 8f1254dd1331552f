//! Stage orchestration behind the command-line tool.
//!
//! Each stage writes into `<output_root>/<stage>-<key>`, where the key hashes
//! every input that can change the stage's results, so a changed config lands
//! in a fresh directory instead of overwriting an old one. A stage directory
//! holds `manifest.json` (written before any result, never rewritten) and a
//! `COMPLETE` marker once all results are in place.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{digest, BackendKind, BaseKind, PipelineConfig, RefineKind, SmoothScope, TauSetting};
use crate::data::{
    fit_normalization, load_bundle, load_dataset, make_windows, normalize, sanitize, write_bundle, ColumnMapping,
    Dataset, DatasetSplit, LabelSchema, NormalizationStats, WellLogSequence,
};
use crate::error::{Error, Result};
use crate::metrics::{compare_runs, weighted_metrics, ConfusionStats, MetricsReport};
use crate::model::{self, confidence, load_classifier, BaseClassifier, NearestCentroid, ProbabilityVector};
use crate::reasoning::{
    run_panel, CandidatePrediction, CompletionRequest, HttpBackend, HttpConfig, MockBackend, Persona,
    ReasonerBackend,
};
use crate::refine::{candidate_plurality, flying_point_ratio, refine_deterministic, refine_llm, RefineMethod, RefinedWindow};
use crate::router::{calibrate_threshold, coverage_curve, decide, threshold_grid, ThresholdCalibration, Verdict};
use crate::tools::{
    analyze_trend, build_evidence_profile, gather_history, kb_lookup, retrieve_neighbors, KnowledgeBase,
    ReferenceSet, WindowEvidence,
};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const MANIFEST: &str = "manifest.json";
const COMPLETE: &str = "COMPLETE";
const RESUME: &str = "RESUME";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub base_depths: usize,
    pub reason_depths: usize,
    pub routed_windows: usize,
    pub accepted_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub key: String,
    pub code_version: String,
    /// Full config snapshot as TOML.
    pub config: String,
    /// sha256 of the raw input table.
    pub dataset_hash: String,
    pub created: String,
    pub tau: Option<f64>,
    pub verdicts: Option<VerdictCounts>,
}

impl RunManifest {
    fn new(stage: &str, key: &str, cfg: &PipelineConfig, dataset_hash: &str) -> Self {
        Self {
            stage: stage.to_string(),
            key: key.to_string(),
            code_version: CODE_VERSION.to_string(),
            config: cfg.to_toml_string(),
            dataset_hash: dataset_hash.to_string(),
            created: chrono::Utc::now().to_rfc3339(),
            tau: None,
            verdicts: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn stage_dir(cfg: &PipelineConfig, stage: &str, key: &str) -> PathBuf {
    cfg.output_root.join(format!("{stage}-{key}"))
}

fn is_complete(dir: &Path) -> bool {
    dir.join(COMPLETE).exists()
}

/// The directory of a finished upstream stage, or an error naming the
/// command that produces it.
fn require(dir: PathBuf, command: &'static str) -> Result<PathBuf> {
    if is_complete(&dir) {
        Ok(dir)
    } else {
        Err(Error::MissingArtifact {
            path: dir.join(COMPLETE),
            command,
        })
    }
}

/// Creates the stage directory and its manifest, or checks that an existing
/// one belongs to the same key. Returns whether the stage already finished.
fn open_stage(dir: &Path, manifest: &RunManifest) -> Result<bool> {
    if dir.join(MANIFEST).exists() {
        let existing = RunManifest::load(dir)?;
        if existing.key != manifest.key || existing.stage != manifest.stage {
            return Err(Error::RunConflict(dir.to_path_buf()));
        }
        return Ok(is_complete(dir));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(MANIFEST), serde_json::to_string_pretty(manifest)?)?;
    Ok(false)
}

fn finish_stage(dir: &Path) -> Result<()> {
    write_file(&dir.join(COMPLETE), "")
}

struct Keys {
    ingest: String,
    train: String,
    calibrate: String,
    dataset_hash: String,
}

fn stage_keys(cfg: &PipelineConfig) -> Result<Keys> {
    let dataset_hash = file_hash(&cfg.data.table)?;
    let ingest = digest(&(&dataset_hash, file_hash(&cfg.data.columns)?));
    let train = digest(&(&ingest, &cfg.split, &cfg.base, cfg.windows.base, cfg.seed));
    let calibrate = digest(&(&train, cfg.routing.epsilon, cfg.routing.grid_points));
    Ok(Keys {
        ingest,
        train,
        calibrate,
        dataset_hash,
    })
}

fn classify_key(cfg: &PipelineConfig, keys: &Keys) -> Result<String> {
    let upstream = match cfg.routing.tau {
        TauSetting::Fixed(_) => &keys.train,
        TauSetting::Named(_) => &keys.calibrate,
    };
    let kb_hash = match (&cfg.data.knowledge, cfg.tools.knowledge) {
        (Some(p), true) => file_hash(p)?,
        _ => String::new(),
    };
    Ok(digest(&(
        upstream,
        &cfg.routing.tau,
        &cfg.tools,
        &cfg.reasoning,
        &cfg.backend,
        &cfg.refinement,
        cfg.windows.refine,
        kb_hash,
    )))
}

pub fn ingest_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    Ok(stage_dir(cfg, "ingest", &stage_keys(cfg)?.ingest))
}

pub fn train_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    Ok(stage_dir(cfg, "train", &stage_keys(cfg)?.train))
}

pub fn calibrate_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    Ok(stage_dir(cfg, "calibrate", &stage_keys(cfg)?.calibrate))
}

pub fn classify_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let keys = stage_keys(cfg)?;
    Ok(stage_dir(cfg, "classify", &classify_key(cfg, &keys)?))
}

/// Loads the table with its column mapping and writes the canonical bundle.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<PathBuf> {
    let keys = stage_keys(cfg)?;
    let dir = stage_dir(cfg, "ingest", &keys.ingest);
    if open_stage(&dir, &RunManifest::new("ingest", &keys.ingest, cfg, &keys.dataset_hash))? {
        return Ok(dir);
    }
    let mapping = ColumnMapping::from_file(&cfg.data.columns)?;
    let ds = load_dataset(&cfg.data.table, &mapping)?;
    write_bundle(&dir.join("bundle"), &ds.sequences, &ds.schema)?;
    let wells: Vec<serde_json::Value> = ds
        .sequences
        .iter()
        .map(|s| serde_json::json!({ "well": s.well_id(), "samples": s.len() }))
        .collect();
    let report = serde_json::json!({
        "rows": ds.report.rows,
        "samples": ds.total_samples(),
        "imputed_cells": ds.report.imputed_cells,
        "skipped_wells": ds.report.skipped_wells,
        "classes": ds.schema.names(),
        "channels": ds.sequences.first().map(|s| s.channel_names().to_vec()),
        "wells": wells,
    });
    write_file(&dir.join("ingest_report.json"), serde_json::to_string_pretty(&report)?)?;
    finish_stage(&dir)?;
    Ok(dir)
}

/// The configured split; an empty train list means every well not held out.
pub fn resolve_split(cfg: &PipelineConfig, ds: &Dataset) -> Result<DatasetSplit> {
    let mut train = cfg.split.train.clone();
    if train.is_empty() {
        let held: BTreeSet<&String> = cfg.split.val.iter().chain(&cfg.split.test).collect();
        train = ds
            .sequences
            .iter()
            .map(|s| s.well_id().to_string())
            .filter(|id| !held.contains(id))
            .collect();
    }
    let split = DatasetSplit {
        train,
        val: cfg.split.val.clone(),
        test: cfg.split.test.clone(),
    };
    split.validate(ds)?;
    Ok(split)
}

fn normalize_all(seqs: &[WellLogSequence], stats: &NormalizationStats) -> Result<Vec<WellLogSequence>> {
    seqs.iter().map(|s| normalize(s, stats)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: BaseKind,
    pub train_wells: Vec<String>,
    pub val_wells: Vec<String>,
    pub test_wells: Vec<String>,
    pub best_epoch: usize,
    pub val_f1: f64,
    pub test_f1: Option<f64>,
    pub train_seconds: f64,
}

/// Fits normalization and the base classifier on the training wells.
pub fn cmd_train_base(cfg: &PipelineConfig) -> Result<PathBuf> {
    let keys = stage_keys(cfg)?;
    let ingest = require(stage_dir(cfg, "ingest", &keys.ingest), "ingest")?;
    let dir = stage_dir(cfg, "train", &keys.train);
    if open_stage(&dir, &RunManifest::new("train", &keys.train, cfg, &keys.dataset_hash))? {
        return Ok(dir);
    }
    let ds = load_bundle(&ingest.join("bundle"))?;
    let split = resolve_split(cfg, &ds)?;
    let started = Instant::now();
    let train_raw = ds.select(&split.train)?;
    let stats = fit_normalization(&train_raw)?;
    let train = normalize_all(&train_raw, &stats)?;
    let val = normalize_all(&ds.select(&split.val)?, &stats)?;
    let selection = if val.is_empty() { &train } else { &val };

    let (classifier, best_epoch, history): (Box<dyn BaseClassifier>, usize, Vec<model::EpochStats>) =
        match cfg.base.kind {
            BaseKind::Mlp => {
                let out = model::train(&train, &val, &ds.schema, &cfg.train_config())?;
                write_file(&dir.join("model.txt"), out.model.to_text())?;
                (Box::new(out.model), out.best_epoch, out.history)
            }
            BaseKind::Centroid => {
                let m = NearestCentroid::fit(&train, &ds.schema)?;
                write_file(&dir.join("model.txt"), m.to_text())?;
                (Box::new(m), 0, Vec::new())
            }
        };
    let train_seconds = started.elapsed().as_secs_f64();
    write_file(&dir.join("normalization.csv"), stats.to_text())?;

    let mut hist = String::from("epoch,train_loss,val_f1\n");
    for h in &history {
        hist.push_str(&format!("{},{:.6},{:.6}\n", h.epoch, h.train_loss, h.val_f1));
    }
    write_file(&dir.join("training_history.csv"), hist)?;

    let report = base_report(classifier.as_ref(), selection, &ds.schema)?;
    write_file(&dir.join("validation_metrics.csv"), report.to_csv(ds.schema.names()))?;
    let test = normalize_all(&ds.select(&split.test)?, &stats)?;
    let test_f1 = if test.iter().all(|s| s.labels().is_some()) && !test.is_empty() {
        Some(model::evaluate_f1(classifier.as_ref(), &test)?)
    } else {
        None
    };
    let summary = TrainSummary {
        kind: cfg.base.kind,
        train_wells: split.train,
        val_wells: split.val,
        test_wells: split.test,
        best_epoch,
        val_f1: report.f1,
        test_f1,
        train_seconds,
    };
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    finish_stage(&dir)?;
    Ok(dir)
}

/// Metrics of the base argmax alone over labelled wells.
fn base_report(model: &dyn BaseClassifier, seqs: &[WellLogSequence], schema: &LabelSchema) -> Result<MetricsReport> {
    let mut cm = ConfusionStats::new(schema.num_classes());
    let mut isolated = 0.0;
    for seq in seqs {
        let Some(labels) = seq.labels() else { continue };
        let pred: Vec<usize> = model.predict_sequence(seq)?.iter().map(ProbabilityVector::argmax).collect();
        for (&y, &p) in labels.iter().zip(&pred) {
            cm.accumulate(y, p)?;
        }
        isolated += flying_point_ratio(&pred) * pred.len() as f64;
    }
    let samples = cm.total();
    let fpr = if samples == 0 { 0.0 } else { isolated / samples as f64 };
    Ok(MetricsReport::from_parts(weighted_metrics(&cm)?, samples, fpr, 1.0, 0, 0, schema.names()))
}

/// Everything downstream stages need from ingest and training.
pub struct TrainedBase {
    pub dataset: Dataset,
    pub split: DatasetSplit,
    pub stats: NormalizationStats,
    pub model: Box<dyn BaseClassifier>,
}

pub fn load_trained(cfg: &PipelineConfig) -> Result<TrainedBase> {
    let keys = stage_keys(cfg)?;
    let ingest = require(stage_dir(cfg, "ingest", &keys.ingest), "ingest")?;
    let train = require(stage_dir(cfg, "train", &keys.train), "train-base")?;
    let dataset = load_bundle(&ingest.join("bundle"))?;
    let split = resolve_split(cfg, &dataset)?;
    let stats = NormalizationStats::from_text(&read_file(&train.join("normalization.csv"))?)?;
    let model = load_classifier(&train.join("model.txt"))?;
    Ok(TrainedBase {
        dataset,
        split,
        stats,
        model,
    })
}

/// Coverage curve and threshold on the validation wells (training wells when
/// no validation well is configured).
pub fn cmd_calibrate(cfg: &PipelineConfig) -> Result<PathBuf> {
    let keys = stage_keys(cfg)?;
    let trained = load_trained(cfg)?;
    let dir = stage_dir(cfg, "calibrate", &keys.calibrate);
    if open_stage(&dir, &RunManifest::new("calibrate", &keys.calibrate, cfg, &keys.dataset_hash))? {
        return Ok(dir);
    }
    let wells = if trained.split.val.is_empty() {
        &trained.split.train
    } else {
        &trained.split.val
    };
    let seqs = normalize_all(&trained.dataset.select(wells)?, &trained.stats)?;
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for seq in &seqs {
        let labels = seq
            .labels()
            .ok_or_else(|| Error::Data(format!("calibration well '{}' has no labels", seq.well_id())))?;
        for (p, &y) in trained.model.predict_sequence(seq)?.iter().zip(labels) {
            conf.push(confidence(p));
            correct.push(p.argmax() == y);
        }
    }
    let curve = coverage_curve(&conf, &correct, &threshold_grid(cfg.routing.grid_points))?;
    let cal = calibrate_threshold(&curve, cfg.routing.epsilon, conf.len())?;
    write_file(&dir.join("coverage_curve.csv"), curve.to_csv())?;
    write_file(&dir.join("calibration.txt"), cal.to_text())?;
    finish_stage(&dir)?;
    Ok(dir)
}

fn resolve_tau(cfg: &PipelineConfig) -> Result<f64> {
    match cfg.routing.tau {
        TauSetting::Fixed(t) => Ok(t),
        TauSetting::Named(_) => {
            let dir = require(calibrate_dir(cfg)?, "calibrate")?;
            ThresholdCalibration::threshold_from_text(&read_file(&dir.join("calibration.txt"))?)
        }
    }
}

/// Builds the configured backend. Remote settings missing from the config
/// come from the environment.
pub fn make_backend(cfg: &PipelineConfig) -> Result<Box<dyn ReasonerBackend>> {
    match cfg.backend.kind {
        BackendKind::Mock => Ok(Box::new(MockBackend)),
        BackendKind::Remote => {
            let http = HttpConfig::resolve(
                cfg.backend.endpoint.as_deref(),
                cfg.backend.model.as_deref(),
                Duration::from_secs(cfg.backend.timeout_secs),
            )?;
            Ok(Box::new(HttpBackend::new(http)?))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    key: String,
    seed: u64,
    reply: String,
}

/// Wraps a backend so every completion is appended to a per-well journal and
/// a resumed run replays journalled replies instead of querying again.
struct Journal<'a> {
    inner: &'a dyn ReasonerBackend,
    replay: HashMap<String, String>,
    file: Mutex<fs::File>,
    path: PathBuf,
    /// Completions in call order, replays included.
    log: Mutex<Vec<JournalEntry>>,
    queried: Mutex<usize>,
    replayed: Mutex<usize>,
}

impl<'a> Journal<'a> {
    fn open(inner: &'a dyn ReasonerBackend, path: PathBuf) -> Result<Self> {
        let mut replay = HashMap::new();
        if path.exists() {
            for line in read_file(&path)?.lines() {
                // a torn last line from an interrupted write is ignored
                if let Ok(e) = serde_json::from_str::<JournalEntry>(line) {
                    replay.entry(e.key).or_insert(e.reply);
                }
            }
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            inner,
            replay,
            file: Mutex::new(file),
            path,
            log: Mutex::new(Vec::new()),
            queried: Mutex::new(0),
            replayed: Mutex::new(0),
        })
    }
}

impl ReasonerBackend for Journal<'_> {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let key = request.key();
        let reply = if let Some(r) = self.replay.get(&key) {
            *self.replayed.lock().expect("journal lock") += 1;
            r.clone()
        } else {
            let r = self.inner.complete(request)?;
            *self.queried.lock().expect("journal lock") += 1;
            let entry = JournalEntry {
                key: key.clone(),
                seed: request.seed,
                reply: r.clone(),
            };
            let mut f = self.file.lock().expect("journal lock");
            writeln!(f, "{}", serde_json::to_string(&entry)?)
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(&self.path, e))?;
            r
        };
        self.log.lock().expect("journal lock").push(JournalEntry {
            key,
            seed: request.seed,
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellSummary {
    pub well: String,
    pub samples: usize,
    pub counts: VerdictCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub tau: f64,
    pub class_names: Vec<String>,
    pub personas: Vec<String>,
    pub counts: VerdictCounts,
    pub wells: Vec<WellSummary>,
    pub backend_queries: usize,
    pub replayed: usize,
}

/// Shared, read-only inputs of the per-well classification.
struct ClassifyContext<'a> {
    cfg: &'a PipelineConfig,
    schema: &'a LabelSchema,
    personas: Vec<Persona>,
    kb: Option<KnowledgeBase>,
    kb_channels: Vec<String>,
    reference: Option<ReferenceSet>,
}

struct RoutedWell {
    raw: WellLogSequence,
    norm: WellLogSequence,
    probs: Vec<ProbabilityVector>,
    verdicts: Vec<Verdict>,
    /// `(start, end, routed)` per refinement window.
    windows: Vec<(usize, usize, bool)>,
    counts: VerdictCounts,
}

fn route_well(
    raw: WellLogSequence,
    stats: &NormalizationStats,
    model: &dyn BaseClassifier,
    tau: f64,
    width: usize,
) -> Result<RoutedWell> {
    let norm = normalize(&raw, stats)?;
    let probs = model.predict_sequence(&norm)?;
    let verdicts: Vec<Verdict> = probs.iter().map(|p| decide(confidence(p), tau).verdict).collect();
    let windows: Vec<(usize, usize, bool)> = make_windows(&raw, width, width)?
        .iter()
        .map(|w| (w.start, w.end, w.indices().any(|t| verdicts[t] == Verdict::Reason)))
        .collect();
    let routed_windows = windows.iter().filter(|w| w.2).count();
    let reason_depths = verdicts.iter().filter(|&&v| v == Verdict::Reason).count();
    let counts = VerdictCounts {
        base_depths: verdicts.len() - reason_depths,
        reason_depths,
        routed_windows,
        accepted_windows: windows.len() - routed_windows,
    };
    Ok(RoutedWell {
        raw,
        norm,
        probs,
        verdicts,
        windows,
        counts,
    })
}

struct WellOutput {
    audit: String,
    profiles: Vec<String>,
    decisions: Vec<String>,
    completions: Vec<JournalEntry>,
    queried: usize,
    replayed: usize,
}

fn classify_well(
    ctx: &ClassifyContext,
    well: &RoutedWell,
    backend: &dyn ReasonerBackend,
    journal_path: PathBuf,
) -> Result<WellOutput> {
    let cfg = ctx.cfg;
    let schema = ctx.schema;
    let flags = cfg.tools.flags();
    let params = cfg.sampling();
    let journal = Journal::open(backend, journal_path)?;
    let raw = &well.raw;
    let n = raw.len();
    let id = raw.well_id();

    let mut pred: Vec<Option<usize>> = (0..n)
        .map(|t| (well.verdicts[t] == Verdict::Base).then(|| well.probs[t].argmax()))
        .collect();
    let mut method: Vec<Option<RefineMethod>> = vec![None; n];
    let mut persona_labels: Vec<Vec<Option<usize>>> = vec![vec![None; ctx.personas.len()]; n];
    let mut profiles = Vec::new();
    let mut decisions = Vec::new();

    for &(start, end, routed) in &well.windows {
        if !routed {
            continue;
        }
        let knowledge = match (&ctx.kb, flags.knowledge) {
            (Some(kb), true) => {
                let classes: BTreeSet<usize> = (start..=end)
                    .flat_map(|t| well.probs[t].ranked().into_iter().take(cfg.tools.knowledge_classes))
                    .collect();
                let classes: Vec<usize> = classes.into_iter().collect();
                Some(kb_lookup(kb, schema, &ctx.kb_channels, &classes)?)
            }
            _ => None,
        };
        let trend = if flags.trend {
            Some(analyze_trend(raw, start, end, cfg.tools.trend_radius)?)
        } else {
            None
        };
        let neighbors = match (&ctx.reference, flags.neighbors) {
            (Some(r), true) => Some(
                (start..=end)
                    .map(|t| retrieve_neighbors(&well.norm.row(t), r, cfg.tools.neighbors_k))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        let history = if flags.history {
            Some(gather_history(&pred, start, cfg.tools.history_depth)?)
        } else {
            None
        };
        let profile = build_evidence_profile(
            WindowEvidence {
                well_id: id.to_string(),
                start,
                depths: raw.depths()[start..=end].to_vec(),
                channel_names: raw.channel_names().to_vec(),
                values: (start..=end).map(|t| raw.row(t)).collect(),
                base_probs: well.probs[start..=end].to_vec(),
            },
            knowledge,
            trend,
            neighbors,
            history,
            flags,
        )?;

        let candidates = run_panel(&journal, &ctx.personas, &profile, schema, &params, cfg.prompt_budget())?;
        if let Some(err) = candidates.iter().find_map(|c| c.backend_error.as_ref()) {
            return Err(Error::Backend(format!("well '{id}', window {start}..{end}: {err}")));
        }
        let refined = refine_window(ctx, &journal, &profile, &candidates)?;
        if let Some(err) = &refined.backend_error {
            return Err(Error::Backend(format!("well '{id}', window {start}..{end}: refinement: {err}")));
        }

        for (i, t) in (start..=end).enumerate() {
            for (p, c) in candidates.iter().enumerate() {
                persona_labels[t][p] = Some(c.labels[i]);
            }
            if well.verdicts[t] == Verdict::Reason {
                pred[t] = Some(refined.labels[i]);
                method[t] = Some(refined.method);
            }
        }
        profiles.push(profile.to_json()?);
        decisions.push(serde_json::to_string(&WindowDecision {
            well: id,
            start,
            end,
            candidates: &candidates,
            refined: &refined,
        })?);
    }

    let mut labels: Vec<usize> = pred.into_iter().map(|p| p.expect("every depth labelled")).collect();
    let whole_well = cfg.refinement.enabled
        && cfg.refinement.method == RefineKind::Deterministic
        && cfg.refinement.scope == SmoothScope::Well;
    if whole_well {
        // base-accepted depths keep their labels; only routed depths move
        let smoothed = refine_deterministic(&labels, cfg.refinement.min_run);
        for t in 0..n {
            if well.verdicts[t] == Verdict::Reason {
                labels[t] = smoothed[t];
                method[t] = Some(RefineMethod::Deterministic);
            }
        }
    }

    let audit = render_audit(ctx, well, &labels, &method, &persona_labels)?;
    let completions = std::mem::take(&mut *journal.log.lock().expect("journal lock"));
    let queried = *journal.queried.lock().expect("journal lock");
    let replayed = *journal.replayed.lock().expect("journal lock");
    Ok(WellOutput {
        audit,
        profiles,
        decisions,
        completions,
        queried,
        replayed,
    })
}

#[derive(Serialize)]
struct WindowDecision<'a> {
    well: &'a str,
    start: usize,
    end: usize,
    candidates: &'a [CandidatePrediction],
    refined: &'a RefinedWindow,
}

fn refine_window(
    ctx: &ClassifyContext,
    backend: &dyn ReasonerBackend,
    profile: &crate::tools::EvidenceProfile,
    candidates: &[CandidatePrediction],
) -> Result<RefinedWindow> {
    let r = &ctx.cfg.refinement;
    let plural = || candidate_plurality(candidates, &profile.base_probs);
    let plain = |labels, method| RefinedWindow {
        labels,
        method,
        rationale: None,
        raw: Vec::new(),
        backend_error: None,
    };
    if !r.enabled {
        return Ok(plain(plural(), RefineMethod::Plurality));
    }
    match (r.method, r.scope) {
        (RefineKind::Llm, _) => refine_llm(
            backend,
            profile,
            candidates,
            ctx.schema,
            &r.guidelines(),
            &ctx.cfg.sampling(),
        ),
        (RefineKind::Deterministic, SmoothScope::Window) => Ok(plain(
            refine_deterministic(&plural(), r.min_run),
            RefineMethod::Deterministic,
        )),
        // smoothed later over the assembled well
        (RefineKind::Deterministic, SmoothScope::Well) => Ok(plain(plural(), RefineMethod::Plurality)),
    }
}

const AUDIT_FIXED: [&str; 6] = ["depth_index", "depth", "true_label", "base_label", "base_confidence", "verdict"];

fn render_audit(
    ctx: &ClassifyContext,
    well: &RoutedWell,
    labels: &[usize],
    method: &[Option<RefineMethod>],
    persona_labels: &[Vec<Option<usize>>],
) -> Result<String> {
    let schema = ctx.schema;
    let tag = ctx.cfg.tools.flags().tag();
    let mut in_routed = vec![false; labels.len()];
    for &(s, e, routed) in &well.windows {
        in_routed[s..=e].iter_mut().for_each(|x| *x = routed);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = AUDIT_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(ctx.personas.iter().map(|p| p.key().to_string()));
    header.extend(["final_label", "method", "tools"].map(String::from));
    w.write_record(&header)?;
    let truth = well.raw.labels();
    for t in 0..labels.len() {
        let mut row = vec![
            t.to_string(),
            format!("{}", well.raw.depths()[t]),
            truth.map_or(String::new(), |l| schema.name(l[t]).to_string()),
            schema.name(well.probs[t].argmax()).to_string(),
            format!("{:.6}", confidence(&well.probs[t])),
            well.verdicts[t].as_str().to_string(),
        ];
        row.extend(
            persona_labels[t]
                .iter()
                .map(|l| l.map_or(String::new(), |l| schema.name(l).to_string())),
        );
        row.push(schema.name(labels[t]).to_string());
        row.push(method[t].map_or("base", RefineMethod::as_str).to_string());
        row.push(if in_routed[t] { tag.clone() } else { String::new() });
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("audit buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn audit_name(i: usize, well: &str) -> String {
    format!("{i:03}_{}.csv", sanitize(well))
}

/// Full coarse-to-fine pass over the test wells with the configured backend.
pub fn cmd_classify(cfg: &PipelineConfig) -> Result<PathBuf> {
    let backend = make_backend(cfg)?;
    cmd_classify_with(cfg, backend.as_ref())
}

/// As [`cmd_classify`], with the reasoning backend supplied by the caller.
pub fn cmd_classify_with(cfg: &PipelineConfig, backend: &dyn ReasonerBackend) -> Result<PathBuf> {
    let keys = stage_keys(cfg)?;
    let key = classify_key(cfg, &keys)?;
    let trained = load_trained(cfg)?;
    let tau = resolve_tau(cfg)?;
    let dir = stage_dir(cfg, "classify", &key);
    if is_complete(&dir) {
        return Ok(dir);
    }
    let schema = &trained.dataset.schema;
    if trained.split.test.is_empty() {
        return Err(Error::Config("split.test names no wells to classify".into()));
    }
    let wells: Vec<RoutedWell> = trained
        .dataset
        .select(&trained.split.test)?
        .into_iter()
        .map(|raw| route_well(raw, &trained.stats, trained.model.as_ref(), tau, cfg.windows.refine))
        .collect::<Result<_>>()?;
    let mut counts = VerdictCounts::default();
    for w in &wells {
        counts.base_depths += w.counts.base_depths;
        counts.reason_depths += w.counts.reason_depths;
        counts.routed_windows += w.counts.routed_windows;
        counts.accepted_windows += w.counts.accepted_windows;
    }
    let mut manifest = RunManifest::new("classify", &key, cfg, &keys.dataset_hash);
    manifest.tau = Some(tau);
    manifest.verdicts = Some(counts);
    open_stage(&dir, &manifest)?;

    let flags = cfg.tools.flags();
    let channels = trained.model.channel_names().to_vec();
    let (kb, kb_channels) = match (&cfg.data.knowledge, flags.knowledge) {
        (Some(path), true) => {
            let kb = KnowledgeBase::load(path)?;
            let missing = kb.validate(schema, &channels)?;
            for c in &missing {
                log::warn!("knowledge base has no FEATURE entry for channel '{c}'");
            }
            let present = channels.iter().filter(|c| !missing.contains(c)).cloned().collect();
            (Some(kb), present)
        }
        _ => (None, Vec::new()),
    };
    let reference = if flags.neighbors {
        let train = normalize_all(&trained.dataset.select(&trained.split.train)?, &trained.stats)?;
        Some(ReferenceSet::from_sequences(&train)?)
    } else {
        None
    };
    let ctx = ClassifyContext {
        cfg,
        schema,
        personas: cfg.personas()?,
        kb,
        kb_channels,
        reference,
    };

    let journal_dir = dir.join("journal");
    let audit_dir = dir.join("audit");
    for d in [&journal_dir, &audit_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    // windows within a well run top-down so history sees finished labels
    let results: Vec<Result<WellOutput>> = pool.install(|| {
        wells
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let journal = journal_dir.join(format!("{i:03}_{}.jsonl", sanitize(w.raw.well_id())));
                classify_well(&ctx, w, backend, journal)
            })
            .collect()
    });

    let mut first_error = None;
    let mut profiles = String::new();
    let mut decisions = String::new();
    let mut completions = String::new();
    let (mut queried, mut replayed) = (0, 0);
    for (i, (w, res)) in wells.iter().zip(results).enumerate() {
        match res {
            Ok(out) => {
                write_file(&audit_dir.join(audit_name(i, w.raw.well_id())), &out.audit)?;
                for p in out.profiles {
                    profiles.push_str(&p);
                    profiles.push('\n');
                }
                for d in out.decisions {
                    decisions.push_str(&d);
                    decisions.push('\n');
                }
                for c in out.completions {
                    let line = serde_json::json!({ "well": w.raw.well_id(), "key": c.key, "seed": c.seed, "reply": c.reply });
                    completions.push_str(&line.to_string());
                    completions.push('\n');
                }
                queried += out.queried;
                replayed += out.replayed;
            }
            Err(e) => {
                log::error!("well '{}' failed: {e}", w.raw.well_id());
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        write_file(
            &dir.join(RESUME),
            format!("{e}\nrerun `classify` with the same config to resume; journalled completions are replayed\n"),
        )?;
        return Err(e);
    }

    write_file(&dir.join("evidence_profiles.jsonl"), profiles)?;
    write_file(&dir.join("decisions.jsonl"), decisions)?;
    write_file(&dir.join("completions.jsonl"), completions)?;
    let summary = ClassifySummary {
        tau,
        class_names: schema.names().to_vec(),
        personas: ctx.personas.iter().map(|p| p.key().to_string()).collect(),
        counts,
        wells: wells
            .iter()
            .map(|w| WellSummary {
                well: w.raw.well_id().to_string(),
                samples: w.raw.len(),
                counts: w.counts,
            })
            .collect(),
        backend_queries: queried,
        replayed,
    };
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let _ = fs::remove_file(dir.join(RESUME));
    fs::remove_dir_all(&journal_dir).map_err(|e| Error::io(&journal_dir, e))?;
    finish_stage(&dir)?;
    Ok(dir)
}

/// Audit files of a classify directory, in well order.
pub fn audit_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let audit = dir.join("audit");
    let mut files: Vec<PathBuf> = fs::read_dir(&audit)
        .map_err(|e| Error::io(&audit, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// One parsed audit row.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub true_label: Option<String>,
    pub base_label: String,
    pub verdict: String,
    pub final_label: String,
    pub method: String,
    pub tools: String,
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: no '{name}' column", path.display())))
    };
    let (truth, base, verdict, fin, method, tools) = (
        col("true_label")?,
        col("base_label")?,
        col("verdict")?,
        col("final_label")?,
        col("method")?,
        col("tools")?,
    );
    r.records()
        .map(|rec| {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or_default().to_string();
            Ok(AuditRow {
                true_label: Some(get(truth)).filter(|s| !s.is_empty()),
                base_label: get(base),
                verdict: get(verdict),
                final_label: get(fin),
                method: get(method),
                tools: get(tools),
            })
        })
        .collect()
}

/// Metrics of a finished classify directory; written next to its audits.
pub fn evaluate_dir(dir: &Path) -> Result<MetricsReport> {
    let summary: ClassifySummary = serde_json::from_str(&read_file(&dir.join("summary.json"))?)?;
    let schema = LabelSchema::new(summary.class_names.clone())?;
    let class = |name: &str| schema.index_of(name).ok_or_else(|| Error::Label(name.to_string()));
    let mut cm = ConfusionStats::new(schema.num_classes());
    let (mut isolated, mut base_depths, mut total) = (0.0, 0usize, 0usize);
    for file in audit_files(dir)? {
        let rows = read_audit(&file)?;
        let mut pred = Vec::with_capacity(rows.len());
        for row in &rows {
            let p = class(&row.final_label)?;
            let y = row
                .true_label
                .as_deref()
                .ok_or_else(|| Error::Data(format!("{} has unlabelled depths", file.display())))?;
            cm.accumulate(class(y)?, p)?;
            pred.push(p);
            base_depths += usize::from(row.verdict == Verdict::Base.as_str());
        }
        isolated += flying_point_ratio(&pred) * pred.len() as f64;
        total += rows.len();
    }
    if total == 0 {
        return Err(Error::Data(format!("{} has no audited depths", dir.display())));
    }
    let report = MetricsReport::from_parts(
        weighted_metrics(&cm)?,
        cm.total(),
        isolated / total as f64,
        base_depths as f64 / total as f64,
        summary.counts.routed_windows,
        summary.counts.accepted_windows,
        schema.names(),
    );
    write_file(&dir.join("metrics.csv"), report.to_csv(schema.names()))?;
    write_file(&dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Evaluates this config's classify run and, when `others` is non-empty,
/// writes `comparison.txt` covering it and every other run directory.
pub fn cmd_evaluate(cfg: &PipelineConfig, others: &[PathBuf]) -> Result<(PathBuf, MetricsReport)> {
    let dir = require(classify_dir(cfg)?, "classify")?;
    let report = evaluate_dir(&dir)?;
    if !others.is_empty() {
        let mut runs = vec![(run_name(&dir), report.clone())];
        for other in others {
            runs.push((run_name(other), load_metrics(other)?));
        }
        write_file(&dir.join("comparison.txt"), compare_runs(&runs)?.to_text())?;
    }
    Ok((dir, report))
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Reads `metrics.json`, evaluating a finished classify directory first if needed.
pub fn load_metrics(dir: &Path) -> Result<MetricsReport> {
    let path = dir.join("metrics.json");
    if path.exists() {
        return Ok(serde_json::from_str(&read_file(&path)?)?);
    }
    evaluate_dir(&require(dir.to_path_buf(), "classify")?)
}

/// Result of one end-to-end run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub classify_dir: PathBuf,
    pub report: MetricsReport,
}

/// Every stage in order; finished stages are reused.
pub fn run_pipeline_with(cfg: &PipelineConfig, backend: &dyn ReasonerBackend) -> Result<PipelineRun> {
    cmd_ingest(cfg)?;
    cmd_train_base(cfg)?;
    if matches!(cfg.routing.tau, TauSetting::Named(_)) {
        cmd_calibrate(cfg)?;
    }
    let dir = cmd_classify_with(cfg, backend)?;
    let report = evaluate_dir(&dir)?;
    Ok(PipelineRun {
        classify_dir: dir,
        report,
    })
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let backend = make_backend(cfg)?;
    run_pipeline_with(cfg, backend.as_ref())
}

/// Runs the pipeline once per value of a dotted config key and tabulates the
/// results in `<output_root>/sweep_<key>_<digest>.csv`.
pub fn cmd_sweep(cfg: &PipelineConfig, param: &str, values: &[String]) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let variants: Vec<PipelineConfig> = values
        .iter()
        .map(|v| cfg.with_override(param, v))
        .collect::<Result<_>>()?;
    let mut table = String::from("value,coverage,f1,flying_point_ratio,routed_windows,accepted_windows,run_dir\n");
    for (value, variant) in values.iter().zip(&variants) {
        let run = run_pipeline(variant)?;
        let r = &run.report;
        table.push_str(&format!(
            "{value},{:.6},{:.6},{:.6},{},{},{}\n",
            r.coverage,
            r.f1,
            r.flying_point_ratio,
            r.routed_windows,
            r.accepted_windows,
            run_name(&run.classify_dir)
        ));
    }
    fs::create_dir_all(&cfg.output_root).map_err(|e| Error::io(&cfg.output_root, e))?;
    let path = cfg.output_root.join(format!(
        "sweep_{}_{}.csv",
        sanitize(param),
        digest(&(cfg.to_toml_string(), param, values))
    ));
    write_file(&path, table)?;
    Ok(path)
}

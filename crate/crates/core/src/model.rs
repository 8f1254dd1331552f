//! Lightweight point-wise base classifiers.
//!
//! The default model flattens a depth-centred window of normalized channels,
//! passes it through one ReLU hidden layer and a softmax over the classes.
//! Training minimizes per-depth cross-entropy with Adam and keeps the epoch
//! with the best validation weighted F1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DepthWindow, LabelSchema, WellLogSequence};
use crate::error::{Error, Result};
use crate::metrics::{weighted_metrics, ConfusionStats};

/// A categorical distribution over the label schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("negative or non-finite probability in {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Numerically stable softmax of raw scores.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Most probable class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Classes ordered by decreasing probability (stable on ties).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]));
        idx
    }
}

/// Maximum class probability.
pub fn confidence(p: &ProbabilityVector) -> f64 {
    p.as_slice().iter().copied().fold(0.0, f64::max)
}

/// Anything that can score one depth of a well.
pub trait BaseClassifier: Send + Sync {
    fn schema(&self) -> &LabelSchema;
    fn channel_names(&self) -> &[String];
    fn predict_depth(&self, seq: &WellLogSequence, t: usize) -> ProbabilityVector;

    /// One distribution per depth of `window`, using `seq` for context.
    fn predict_proba(&self, seq: &WellLogSequence, window: &DepthWindow) -> Result<Vec<ProbabilityVector>> {
        self.check(seq)?;
        if window.well_id != seq.well_id() || window.end >= seq.len() {
            return Err(Error::InvalidArgument(format!(
                "window {}[{},{}] does not belong to well {} of length {}",
                window.well_id,
                window.start,
                window.end,
                seq.well_id(),
                seq.len()
            )));
        }
        Ok(window.indices().map(|t| self.predict_depth(seq, t)).collect())
    }

    fn predict_sequence(&self, seq: &WellLogSequence) -> Result<Vec<ProbabilityVector>> {
        self.check(seq)?;
        Ok((0..seq.len()).map(|t| self.predict_depth(seq, t)).collect())
    }

    fn check(&self, seq: &WellLogSequence) -> Result<()> {
        if seq.channel_names() != self.channel_names() {
            return Err(Error::Model(format!(
                "well '{}' has channels {:?}, model expects {:?}",
                seq.well_id(),
                seq.channel_names(),
                self.channel_names()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
    /// Depth window fed to the model for each prediction.
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 64,
            seed: 17,
            patience: 12,
            window: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("base.{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("base.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Two-layer feed-forward classifier over a flattened depth window.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    schema: LabelSchema,
    channel_names: Vec<String>,
    window: usize,
    hidden: usize,
    /// hidden x input, row-major
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// classes x hidden, row-major
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Window offsets `[-w/2, w - 1 - w/2]` around a target depth.
fn window_offsets(window: usize) -> std::ops::RangeInclusive<isize> {
    let lo = -((window / 2) as isize);
    lo..=lo + window as isize - 1
}

/// Flattened depth-major features for depth `t`, with out-of-range depths
/// clamped to the nearest edge of the well.
pub fn centered_features(seq: &WellLogSequence, t: usize, window: usize) -> Vec<f64> {
    let last = seq.len() as isize - 1;
    let mut out = Vec::with_capacity(window * seq.num_channels());
    for off in window_offsets(window) {
        let idx = (t as isize + off).clamp(0, last) as usize;
        for c in 0..seq.num_channels() {
            out.push(seq.value(c, idx));
        }
    }
    out
}

impl BaseModel {
    pub fn zeros(schema: LabelSchema, channel_names: Vec<String>, window: usize, hidden: usize) -> Self {
        let input = window * channel_names.len();
        let k = schema.num_classes();
        Self {
            schema,
            channel_names,
            window,
            hidden,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; k * hidden],
            b2: vec![0.0; k],
        }
    }

    fn init(schema: LabelSchema, channel_names: Vec<String>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(schema, channel_names, cfg.window, cfg.hidden);
        let input = m.input_dim();
        let k = m.num_classes();
        let a1 = (6.0 / (input + m.hidden) as f64).sqrt();
        let a2 = (6.0 / (m.hidden + k) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..=a1));
        m.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..=a2));
        m
    }

    pub fn input_dim(&self) -> usize {
        self.window * self.channel_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Read-only view of (w1, b1, w2, b2).
    pub fn parameters(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.w1, &self.b1, &self.w2, &self.b2)
    }

    pub fn parameters_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2)
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        let input = x.len();
        for (j, h) in out.iter_mut().enumerate() {
            let row = &self.w1[j * input..(j + 1) * input];
            let z = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *h = z.max(0.0);
        }
    }

    fn logits(&self, h: &[f64], out: &mut [f64]) {
        let hidden = h.len();
        for (k, z) in out.iter_mut().enumerate() {
            let row = &self.w2[k * hidden..(k + 1) * hidden];
            *z = self.b2[k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn forward(&self, x: &[f64]) -> ProbabilityVector {
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.num_classes()];
        self.hidden_activations(x, &mut h);
        self.logits(&h, &mut z);
        ProbabilityVector::softmax(&z)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("lithoroute-model mlp v1\n");
        write_identity(&mut out, &self.schema, &self.channel_names);
        let _ = writeln!(out, "window {}", self.window);
        let _ = writeln!(out, "hidden {}", self.hidden);
        for (name, values) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)] {
            out.push_str(name);
            for v in values {
                let _ = write!(out, " {v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("lithoroute-model mlp v1") {
            return Err(Error::Model("unrecognized model header".into()));
        }
        let (schema, channel_names) = read_identity(&mut lines)?;
        let parse_usize = |s: String| s.parse::<usize>().map_err(|_| Error::Model(format!("bad integer '{s}'")));
        let mut field = |key: &str| next_field(&mut lines, key).map(str::to_string);
        let window = parse_usize(field("window")?)?;
        let hidden = parse_usize(field("hidden")?)?;
        let mut model = Self::zeros(schema, channel_names, window, hidden);
        for name in ["w1", "b1", "w2", "b2"] {
            let values: Vec<f64> = field(name)?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Model(format!("bad number '{v}'"))))
                .collect::<Result<_>>()?;
            let slot = match name {
                "w1" => &mut model.w1,
                "b1" => &mut model.b1,
                "w2" => &mut model.w2,
                _ => &mut model.b2,
            };
            if values.len() != slot.len() {
                return Err(Error::Model(format!(
                    "{name}: {} values, expected {}",
                    values.len(),
                    slot.len()
                )));
            }
            *slot = values;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// The `key value` line expected next in a persisted model.
fn next_field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Model(format!("missing '{key}' line")))?;
    match line.strip_prefix(key) {
        Some("") => Ok(""),
        Some(rest) if rest.starts_with(' ') => Ok(&rest[1..]),
        _ => Err(Error::Model(format!("expected '{key}', found '{line}'"))),
    }
}

fn write_identity(out: &mut String, schema: &LabelSchema, channel_names: &[String]) {
    let _ = writeln!(out, "schema {}", schema.fingerprint());
    let _ = writeln!(out, "classes {}", schema.names().join("\t"));
    let _ = writeln!(out, "channels {}", channel_names.join("\t"));
}

fn read_identity<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<(LabelSchema, Vec<String>)> {
    let fingerprint = next_field(lines, "schema")?;
    let schema = LabelSchema::new(next_field(lines, "classes")?.split('\t'))?;
    if schema.fingerprint() != fingerprint {
        return Err(Error::Model("schema fingerprint mismatch".into()));
    }
    let channels = next_field(lines, "channels")?.split('\t').map(str::to_string).collect();
    Ok((schema, channels))
}

impl BaseClassifier for BaseModel {
    fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    fn predict_depth(&self, seq: &WellLogSequence, t: usize) -> ProbabilityVector {
        self.forward(&centered_features(seq, t, self.window))
    }
}

/// Class-centroid classifier on single-depth channel vectors; probabilities
/// are a softmax over negative half squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    schema: LabelSchema,
    channel_names: Vec<String>,
    centroids: Vec<Option<Vec<f64>>>,
}

impl NearestCentroid {
    pub fn fit(train: &[WellLogSequence], schema: &LabelSchema) -> Result<Self> {
        let samples = labelled_samples(train, schema)?;
        let m = train[0].num_channels();
        let k = schema.num_classes();
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (seq, t, y) in samples {
            counts[y] += 1;
            for c in 0..m {
                sums[y][c] += seq.value(c, t);
            }
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(Self {
            schema: schema.clone(),
            channel_names: train[0].channel_names().to_vec(),
            centroids,
        })
    }
}

impl NearestCentroid {
    pub fn to_text(&self) -> String {
        let mut out = String::from("lithoroute-model centroid v1\n");
        write_identity(&mut out, &self.schema, &self.channel_names);
        for c in &self.centroids {
            out.push_str("centroid");
            match c {
                Some(v) => v.iter().for_each(|x| {
                    let _ = write!(out, " {x:e}");
                }),
                None => out.push_str(" -"),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("lithoroute-model centroid v1") {
            return Err(Error::Model("unrecognized model header".into()));
        }
        let (schema, channel_names) = read_identity(&mut lines)?;
        let centroids = (0..schema.num_classes())
            .map(|_| {
                let body = next_field(&mut lines, "centroid")?;
                if body == "-" {
                    return Ok(None);
                }
                let v: Vec<f64> = body
                    .split_whitespace()
                    .map(|x| x.parse().map_err(|_| Error::Model(format!("bad number '{x}'"))))
                    .collect::<Result<_>>()?;
                if v.len() != channel_names.len() {
                    return Err(Error::Model("centroid dimension mismatch".into()));
                }
                Ok(Some(v))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema,
            channel_names,
            centroids,
        })
    }
}

/// Reads either persisted model kind.
pub fn load_classifier(path: &Path) -> Result<Box<dyn BaseClassifier>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match text.lines().next() {
        Some("lithoroute-model mlp v1") => Ok(Box::new(BaseModel::from_text(&text)?)),
        Some("lithoroute-model centroid v1") => Ok(Box::new(NearestCentroid::from_text(&text)?)),
        _ => Err(Error::Model(format!("{} is not a saved model", path.display()))),
    }
}

impl BaseClassifier for NearestCentroid {
    fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    fn predict_depth(&self, seq: &WellLogSequence, t: usize) -> ProbabilityVector {
        let row = seq.row(t);
        let scores: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| match c {
                Some(c) => -0.5 * c.iter().zip(&row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                None => f64::NEG_INFINITY,
            })
            .collect();
        ProbabilityVector::softmax(&scores)
    }
}

fn labelled_samples<'a>(
    seqs: &'a [WellLogSequence],
    schema: &LabelSchema,
) -> Result<Vec<(&'a WellLogSequence, usize, usize)>> {
    let mut out = Vec::new();
    for seq in seqs {
        let labels = seq
            .labels()
            .ok_or_else(|| Error::Data(format!("well '{}' has no labels", seq.well_id())))?;
        for (t, &y) in labels.iter().enumerate() {
            if y >= schema.num_classes() {
                return Err(Error::Label(format!(
                    "class index {y} in well '{}' outside {} classes",
                    seq.well_id(),
                    schema.num_classes()
                )));
            }
            out.push((seq, t, y));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no labelled training samples".into()));
    }
    if let Some(bad) = seqs.iter().find(|s| s.channel_names() != seqs[0].channel_names()) {
        return Err(Error::Data(format!("well '{}' has a different channel set", bad.well_id())));
    }
    Ok(out)
}

/// Weighted F1 of `model` over all labelled depths of `seqs`.
pub fn evaluate_f1(model: &dyn BaseClassifier, seqs: &[WellLogSequence]) -> Result<f64> {
    let mut cm = ConfusionStats::new(model.schema().num_classes());
    for seq in seqs {
        let Some(labels) = seq.labels() else { continue };
        for (p, &y) in model.predict_sequence(seq)?.iter().zip(labels) {
            cm.accumulate(y, p.argmax())?;
        }
    }
    Ok(weighted_metrics(&cm)?.f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BaseModel,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Trains the feed-forward base model on every labelled depth of `train`.
///
/// `val` selects the checkpoint; when it is empty the training wells are used
/// instead. Single-threaded, so a fixed seed gives identical weights.
pub fn train(
    train: &[WellLogSequence],
    val: &[WellLogSequence],
    schema: &LabelSchema,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = labelled_samples(train, schema)?;
    if !val.is_empty() {
        labelled_samples(val, schema)?;
        if val[0].channel_names() != train[0].channel_names() {
            return Err(Error::Data("validation wells use different channels".into()));
        }
    }
    let selection = if val.is_empty() { train } else { val };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = BaseModel::init(schema.clone(), train[0].channel_names().to_vec(), cfg, &mut rng);
    let input = model.input_dim();
    let hidden = model.hidden;
    let k = model.num_classes();

    let features: Vec<Vec<f64>> = samples
        .iter()
        .map(|(seq, t, _)| centered_features(seq, *t, cfg.window))
        .collect();
    let targets: Vec<usize> = samples.iter().map(|s| s.2).collect();

    let mut opt = [
        Adam::new(model.w1.len()),
        Adam::new(model.b1.len()),
        Adam::new(model.w2.len()),
        Adam::new(model.b2.len()),
    ];
    let mut gw1 = vec![0.0; model.w1.len()];
    let mut gb1 = vec![0.0; hidden];
    let mut gw2 = vec![0.0; model.w2.len()];
    let mut gb2 = vec![0.0; k];
    let mut h = vec![0.0; hidden];
    let mut z = vec![0.0; k];
    let mut dh = vec![0.0; hidden];

    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..features.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            gw1.fill(0.0);
            gb1.fill(0.0);
            gw2.fill(0.0);
            gb2.fill(0.0);
            for &i in batch {
                let x = &features[i];
                model.hidden_activations(x, &mut h);
                model.logits(&h, &mut z);
                let p = ProbabilityVector::softmax(&z);
                let y = targets[i];
                loss_sum -= p.get(y).max(1e-300).ln();
                dh.fill(0.0);
                for c in 0..k {
                    let dz = p.get(c) - if c == y { 1.0 } else { 0.0 };
                    gb2[c] += dz;
                    let row = c * hidden;
                    for j in 0..hidden {
                        gw2[row + j] += dz * h[j];
                        dh[j] += dz * model.w2[row + j];
                    }
                }
                for j in 0..hidden {
                    if h[j] <= 0.0 {
                        continue;
                    }
                    let d = dh[j];
                    gb1[j] += d;
                    let row = &mut gw1[j * input..(j + 1) * input];
                    for (g, v) in row.iter_mut().zip(x) {
                        *g += d * v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in [&mut gw1, &mut gb1, &mut gw2, &mut gb2] {
                g.iter_mut().for_each(|v| *v *= scale);
            }
            opt[0].update(&mut model.w1, &gw1, cfg.learning_rate);
            opt[1].update(&mut model.b1, &gb1, cfg.learning_rate);
            opt[2].update(&mut model.w2, &gw2, cfg.learning_rate);
            opt[3].update(&mut model.b2, &gb2, cfg.learning_rate);
        }

        let val_f1 = evaluate_f1(&model, selection)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / features.len() as f64,
            val_f1,
        });
        log::debug!("epoch {epoch}: loss {:.4} val f1 {val_f1:.4}", loss_sum / features.len() as f64);
        if val_f1 > best.2 {
            best = (model.clone(), epoch, val_f1);
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_val_f1: best.2,
        history,
    })
}

//! Well-log datasets: loading, validation, normalization and depth windows.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered lithology class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    class_names: Vec<String>,
}

impl LabelSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let class_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if class_names.len() < 2 {
            return Err(Error::Schema(format!(
                "at least 2 classes required, got {}",
                class_names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &class_names {
            if name.trim().is_empty() {
                return Err(Error::Schema("empty class name".into()));
            }
            if !seen.insert(name.to_lowercase()) {
                return Err(Error::Schema(format!("duplicate class name '{name}'")));
            }
        }
        Ok(Self { class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    /// Case-insensitive lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.class_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }

    /// Stable short hash of the class list, stored alongside persisted models.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Depth-indexed multichannel measurements for one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellLogSequence {
    well_id: String,
    depths: Vec<f64>,
    channel_names: Vec<String>,
    /// `channels[c][t]`
    channels: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    sampling_interval: f64,
}

impl WellLogSequence {
    pub fn new(
        well_id: impl Into<String>,
        depths: Vec<f64>,
        channel_names: Vec<String>,
        channels: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        sampling_interval: f64,
        num_classes: usize,
    ) -> Result<Self> {
        let well_id = well_id.into();
        let len = depths.len();
        if len == 0 {
            return Err(Error::Data(format!("well '{well_id}' has no samples")));
        }
        if let Some(i) = depths.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "well '{well_id}': depths not strictly increasing at {} -> {}",
                depths[i],
                depths[i + 1]
            )));
        }
        if channel_names.len() != channels.len() || channels.is_empty() {
            return Err(Error::Data(format!(
                "well '{well_id}': {} channel names for {} channels",
                channel_names.len(),
                channels.len()
            )));
        }
        for (name, values) in channel_names.iter().zip(&channels) {
            if values.len() != len {
                return Err(Error::Data(format!(
                    "well '{well_id}': channel '{name}' has {} values, expected {len}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "well '{well_id}': channel '{name}' has non-finite values"
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != len {
                return Err(Error::Data(format!(
                    "well '{well_id}': {} labels for {len} depths",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::Label(format!(
                    "class index {bad} out of range for {num_classes} classes"
                )));
            }
        }
        if !(sampling_interval > 0.0) {
            return Err(Error::Data(format!(
                "well '{well_id}': sampling interval must be positive, got {sampling_interval}"
            )));
        }
        Ok(Self {
            well_id,
            depths,
            channel_names,
            channels,
            labels,
            sampling_interval,
        })
    }

    pub fn well_id(&self) -> &str {
        &self.well_id
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn value(&self, c: usize, t: usize) -> f64 {
        self.channels[c][t]
    }

    /// All channel values at depth index `t`.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.channels.iter().map(|ch| ch[t]).collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn sampling_interval(&self) -> f64 {
        self.sampling_interval
    }

    fn with_channels(&self, channels: Vec<Vec<f64>>) -> Self {
        Self {
            channels,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role<'a> {
    WellId,
    Depth,
    Channel(&'a str),
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoleSpec {
    One(String),
    Many(Vec<String>),
}

impl RoleSpec {
    fn iter(&self) -> impl Iterator<Item = &str> {
        let v: Vec<&str> = match self {
            RoleSpec::One(s) => vec![s.as_str()],
            RoleSpec::Many(v) => v.iter().map(String::as_str).collect(),
        };
        v.into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMapping {
    pub classes: Vec<String>,
    /// Raw label values as they appear in the table, parallel to `classes`.
    /// When absent the table holds class names.
    #[serde(default)]
    pub codes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadOptions {
    #[serde(default)]
    pub skip_incomplete_wells: bool,
    #[serde(default)]
    pub sampling_interval: Option<f64>,
}

/// Maps table column names to roles: `well_id`, `depth`, `label`, `channel:<name>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub columns: toml::map::Map<String, toml::Value>,
    pub labels: LabelMapping,
    #[serde(default)]
    pub options: LoadOptions,
}

impl ColumnMapping {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mapping: ColumnMapping =
            toml::from_str(text).map_err(|e| Error::Config(format!("column mapping: {e}")))?;
        mapping.resolved_columns()?;
        Ok(mapping)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("column mapping serializes")
    }

    fn resolved_columns(&self) -> Result<Vec<(String, Vec<String>)>> {
        let mut out = Vec::new();
        for (column, value) in &self.columns {
            let spec: RoleSpec = value
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("column '{column}': {e}")))?;
            let roles: Vec<String> = spec.iter().map(str::to_string).collect();
            for role in &roles {
                parse_role(role)
                    .ok_or_else(|| Error::Config(format!("column '{column}': unknown role '{role}'")))?;
            }
            out.push((column.clone(), roles));
        }
        Ok(out)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.resolved_columns()
            .unwrap_or_default()
            .into_iter()
            .flat_map(|(_, roles)| roles)
            .filter_map(|r| r.strip_prefix("channel:").map(str::to_string))
            .collect()
    }
}

fn parse_role(role: &str) -> Option<Role<'_>> {
    match role {
        "well_id" => Some(Role::WellId),
        "depth" => Some(Role::Depth),
        "label" => Some(Role::Label),
        _ => role
            .strip_prefix("channel:")
            .filter(|n| !n.is_empty())
            .map(Role::Channel),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub imputed_cells: usize,
    pub skipped_wells: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<WellLogSequence>,
    pub schema: LabelSchema,
    pub report: LoadReport,
}

impl Dataset {
    pub fn get(&self, well_id: &str) -> Option<&WellLogSequence> {
        self.sequences.iter().find(|s| s.well_id() == well_id)
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<WellLogSequence>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("unknown well '{id}'")))
            })
            .collect()
    }

    pub fn total_samples(&self) -> usize {
        self.sequences.iter().map(WellLogSequence::len).sum()
    }
}

struct RawRow {
    depth: f64,
    values: Vec<Option<f64>>,
    label: Option<usize>,
}

fn parse_value(raw: &str) -> Option<f64> {
    let v: f64 = raw.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Loads a delimited table (header row) into one sequence per well.
///
/// Wells keep their first-appearance order; rows are sorted by depth. Missing
/// or unparseable channel cells are forward filled within the well, with the
/// first valid value back-filled at the top.
pub fn load_dataset(path: &Path, mapping: &ColumnMapping) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, mapping)
}

pub fn read_dataset<R: std::io::Read>(reader: R, mapping: &ColumnMapping) -> Result<Dataset> {
    let schema = LabelSchema::new(mapping.labels.classes.clone())?;
    if let Some(codes) = &mapping.labels.codes {
        if codes.len() != schema.num_classes() {
            return Err(Error::Config(format!(
                "{} label codes for {} classes",
                codes.len(),
                schema.num_classes()
            )));
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };

    let resolved = mapping.resolved_columns()?;
    let mut well_col = None;
    let mut depth_col = None;
    let mut label_col = None;
    let mut channel_cols: Vec<(String, usize)> = Vec::new();
    for (column, roles) in &resolved {
        let idx = column_index(column)?;
        for role in roles {
            match parse_role(role).expect("validated") {
                Role::WellId => well_col = Some(idx),
                Role::Depth => depth_col = Some(idx),
                Role::Label => label_col = Some(idx),
                Role::Channel(name) => {
                    if channel_cols.iter().any(|(n, _)| n == name) {
                        return Err(Error::Schema(format!("channel '{name}' mapped twice")));
                    }
                    channel_cols.push((name.to_string(), idx));
                }
            }
        }
    }
    let well_col = well_col.ok_or_else(|| Error::Schema("no column mapped to well_id".into()))?;
    let depth_col = depth_col.ok_or_else(|| Error::Schema("no column mapped to depth".into()))?;
    if channel_cols.is_empty() {
        return Err(Error::Schema("no channel columns mapped".into()));
    }

    let decode_label = |raw: &str| -> Result<usize> {
        let raw = raw.trim();
        let found = match &mapping.labels.codes {
            Some(codes) => codes.iter().position(|c| c == raw),
            None => schema.index_of(raw),
        };
        found.ok_or_else(|| Error::Label(raw.to_string()))
    };

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRow>> = HashMap::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        rows += 1;
        let well = record.get(well_col).unwrap_or("").to_string();
        if well.is_empty() {
            return Err(Error::Data(format!("row {rows}: empty well id")));
        }
        let depth_raw = record.get(depth_col).unwrap_or("");
        let depth = parse_value(depth_raw).ok_or_else(|| {
            Error::Data(format!("row {rows}: unparseable depth '{depth_raw}'"))
        })?;
        let values = channel_cols
            .iter()
            .map(|(_, idx)| record.get(*idx).and_then(parse_value))
            .collect();
        let label = match label_col {
            Some(idx) => Some(decode_label(record.get(idx).unwrap_or(""))?),
            None => None,
        };
        if !groups.contains_key(&well) {
            order.push(well.clone());
        }
        groups.entry(well).or_default().push(RawRow {
            depth,
            values,
            label,
        });
    }

    let channel_names: Vec<String> = channel_cols.iter().map(|(n, _)| n.clone()).collect();
    let mut report = LoadReport {
        rows,
        ..Default::default()
    };
    let mut sequences = Vec::new();
    'wells: for well in order {
        let mut raw = groups.remove(&well).expect("grouped");
        raw.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        let depths: Vec<f64> = raw.iter().map(|r| r.depth).collect();

        let mut channels = Vec::with_capacity(channel_names.len());
        for (c, name) in channel_names.iter().enumerate() {
            let column: Vec<Option<f64>> = raw.iter().map(|r| r.values[c]).collect();
            let Some(first) = column.iter().flatten().next().copied() else {
                if mapping.options.skip_incomplete_wells {
                    report.skipped_wells.push(well.clone());
                    continue 'wells;
                }
                return Err(Error::Data(format!(
                    "well '{well}': channel '{name}' has no valid values"
                )));
            };
            let mut last = first;
            let mut filled = Vec::with_capacity(column.len());
            for v in column {
                match v {
                    Some(v) => last = v,
                    None => report.imputed_cells += 1,
                }
                filled.push(last);
            }
            channels.push(filled);
        }

        let labels = label_col.map(|_| raw.iter().map(|r| r.label.expect("labelled")).collect());
        let interval = match mapping.options.sampling_interval {
            Some(v) => v,
            None if depths.len() > 1 => {
                (depths[depths.len() - 1] - depths[0]) / (depths.len() - 1) as f64
            }
            None => 1.0,
        };
        sequences.push(WellLogSequence::new(
            well,
            depths,
            channel_names.clone(),
            channels,
            labels,
            interval,
            schema.num_classes(),
        )?);
    }

    Ok(Dataset {
        sequences,
        schema,
        report,
    })
}

/// Column mapping matching the layout produced by [`write_table`].
pub fn canonical_mapping(channel_names: &[String], schema: &LabelSchema, labelled: bool) -> ColumnMapping {
    let mut columns = toml::map::Map::new();
    columns.insert("well_id".into(), toml::Value::String("well_id".into()));
    columns.insert("depth".into(), toml::Value::String("depth".into()));
    for name in channel_names {
        columns.insert(name.clone(), toml::Value::String(format!("channel:{name}")));
    }
    if labelled {
        columns.insert("label".into(), toml::Value::String("label".into()));
    }
    ColumnMapping {
        columns,
        labels: LabelMapping {
            classes: schema.names().to_vec(),
            codes: None,
        },
        options: LoadOptions::default(),
    }
}

/// Writes sequences as one delimited table in canonical layout.
pub fn write_table<W: std::io::Write>(
    writer: W,
    sequences: &[WellLogSequence],
    schema: &LabelSchema,
) -> Result<()> {
    let Some(first) = sequences.first() else {
        return Err(Error::InvalidArgument("no sequences to write".into()));
    };
    let labelled = first.labels().is_some();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["well_id".to_string(), "depth".to_string()];
    header.extend(first.channel_names().iter().cloned());
    if labelled {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for seq in sequences {
        if seq.channel_names() != first.channel_names() || seq.labels().is_some() != labelled {
            return Err(Error::Data(format!(
                "well '{}' does not share the table layout",
                seq.well_id()
            )));
        }
        for t in 0..seq.len() {
            let mut rec = vec![seq.well_id().to_string(), seq.depths()[t].to_string()];
            rec.extend((0..seq.num_channels()).map(|c| seq.value(c, t).to_string()));
            if let Some(labels) = seq.labels() {
                rec.push(schema.name(labels[t]).to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

/// File-name-safe form of a well id.
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// On-disk dataset bundle: `columns.toml` plus one table per well under `wells/`.
pub fn write_bundle(dir: &Path, sequences: &[WellLogSequence], schema: &LabelSchema) -> Result<Vec<PathBuf>> {
    let Some(first) = sequences.first() else {
        return Err(Error::InvalidArgument("no sequences to write".into()));
    };
    let wells_dir = dir.join("wells");
    fs::create_dir_all(&wells_dir).map_err(|e| Error::io(&wells_dir, e))?;
    let mapping = canonical_mapping(first.channel_names(), schema, first.labels().is_some());
    let mapping_path = dir.join("columns.toml");
    fs::write(&mapping_path, mapping.to_toml_string()).map_err(|e| Error::io(&mapping_path, e))?;

    let mut written = vec![mapping_path];
    for (i, seq) in sequences.iter().enumerate() {
        let path = wells_dir.join(format!("{i:03}_{}.csv", sanitize(seq.well_id())));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_table(file, std::slice::from_ref(seq), schema)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_bundle(dir: &Path) -> Result<Dataset> {
    let mapping_path = dir.join("columns.toml");
    if !mapping_path.exists() {
        return Err(Error::MissingArtifact {
            path: mapping_path,
            command: "ingest",
        });
    }
    let mapping = ColumnMapping::from_file(&mapping_path)?;
    let wells_dir = dir.join("wells");
    let mut files: Vec<PathBuf> = fs::read_dir(&wells_dir)
        .map_err(|e| Error::io(&wells_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();

    let mut sequences = Vec::new();
    let mut report = LoadReport::default();
    let mut schema = None;
    for file in files {
        let ds = load_dataset(&file, &mapping)?;
        report.rows += ds.report.rows;
        report.imputed_cells += ds.report.imputed_cells;
        sequences.extend(ds.sequences);
        schema = Some(ds.schema);
    }
    let schema = match schema {
        Some(s) => s,
        None => LabelSchema::new(mapping.labels.classes.clone())?,
    };
    Ok(Dataset {
        sequences,
        schema,
        report,
    })
}

/// Per-channel z-score statistics fitted on training wells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channel_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn to_text(&self) -> String {
        let mut out = String::from("channel,mean,std\n");
        for ((name, m), s) in self.channel_names.iter().zip(&self.mean).zip(&self.std) {
            out.push_str(&format!("{name},{m},{s}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("channel,mean,std") {
            return Err(Error::Data("stats file: bad header".into()));
        }
        let mut stats = NormalizationStats {
            channel_names: vec![],
            mean: vec![],
            std: vec![],
        };
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.rsplitn(3, ',').collect();
            let [s, m, name] = parts[..] else {
                return Err(Error::Data(format!("stats file: bad line '{line}'")));
            };
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Data(format!("stats file: bad number '{v}'")))
            };
            stats.channel_names.push(name.to_string());
            stats.mean.push(parse(m)?);
            stats.std.push(parse(s)?);
        }
        Ok(stats)
    }
}

/// Population mean/std per channel over every training sample. A channel with
/// zero spread gets std 1.0, so normalizing it only removes the mean.
pub fn fit_normalization(train: &[WellLogSequence]) -> Result<NormalizationStats> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidArgument("cannot fit normalization on no wells".into()));
    };
    let m = first.num_channels();
    for seq in train {
        if seq.channel_names() != first.channel_names() {
            return Err(Error::Data(format!(
                "well '{}' has a different channel set",
                seq.well_id()
            )));
        }
    }
    let n: usize = train.iter().map(WellLogSequence::len).sum();
    let mut mean = vec![0.0; m];
    let mut std = vec![0.0; m];
    for c in 0..m {
        let sum: f64 = train.iter().flat_map(|s| s.channel(c)).sum();
        let mu = sum / n as f64;
        let ss: f64 = train
            .iter()
            .flat_map(|s| s.channel(c))
            .map(|v| (v - mu) * (v - mu))
            .sum();
        let sd = (ss / n as f64).sqrt();
        mean[c] = mu;
        std[c] = if sd > 0.0 { sd } else { 1.0 };
    }
    Ok(NormalizationStats {
        channel_names: first.channel_names().to_vec(),
        mean,
        std,
    })
}

fn check_channels(seq: &WellLogSequence, stats: &NormalizationStats) -> Result<()> {
    if seq.channel_names() != stats.channel_names.as_slice() {
        return Err(Error::Data(format!(
            "well '{}': channels {:?} do not match stats {:?}",
            seq.well_id(),
            seq.channel_names(),
            stats.channel_names
        )));
    }
    Ok(())
}

pub fn normalize(seq: &WellLogSequence, stats: &NormalizationStats) -> Result<WellLogSequence> {
    check_channels(seq, stats)?;
    let channels = (0..seq.num_channels())
        .map(|c| {
            seq.channel(c)
                .iter()
                .map(|v| (v - stats.mean[c]) / stats.std[c])
                .collect()
        })
        .collect();
    Ok(seq.with_channels(channels))
}

pub fn denormalize(seq: &WellLogSequence, stats: &NormalizationStats) -> Result<WellLogSequence> {
    check_channels(seq, stats)?;
    let channels = (0..seq.num_channels())
        .map(|c| {
            seq.channel(c)
                .iter()
                .map(|z| stats.mean[c] + z * stats.std[c])
                .collect()
        })
        .collect();
    Ok(seq.with_channels(channels))
}

/// Whole-well train/validation/test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("well '{id}' appears in more than one split")));
            }
            if dataset.get(id).is_none() {
                return Err(Error::Config(format!("split references unknown well '{id}'")));
            }
        }
        if self.train.is_empty() {
            return Err(Error::Config("split has no training wells".into()));
        }
        Ok(())
    }
}

/// A contiguous index range `[start, end]` of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthWindow {
    pub well_id: String,
    pub start: usize,
    pub end: usize,
    /// One row of channel values per depth in the window.
    pub features: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl DepthWindow {
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn slice(seq: &WellLogSequence, start: usize, end: usize) -> Result<Self> {
        if start > end || end >= seq.len() {
            return Err(Error::InvalidArgument(format!(
                "window [{start},{end}] outside well of length {}",
                seq.len()
            )));
        }
        Ok(Self {
            well_id: seq.well_id().to_string(),
            start,
            end,
            features: (start..=end).map(|t| seq.row(t)).collect(),
            labels: seq.labels().map(|l| l[start..=end].to_vec()),
        })
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Windows starting at `0, stride, 2*stride, ...`; the tail window is
/// truncated rather than dropped, and generation stops once a window reaches
/// the last depth. `stride` may not exceed `width`, so windows always tile the
/// well.
pub fn make_windows(seq: &WellLogSequence, width: usize, stride: usize) -> Result<Vec<DepthWindow>> {
    if width == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window width and stride must be positive".into()));
    }
    if stride > width {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} exceeds width {width}; windows would leave gaps"
        )));
    }
    let len = seq.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + width - 1).min(len - 1);
        out.push(DepthWindow::slice(seq, start, end)?);
        if end == len - 1 {
            break;
        }
        start += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> LabelSchema {
        LabelSchema::new(["A", "B", "C"]).unwrap()
    }

    fn mapping() -> ColumnMapping {
        ColumnMapping::from_toml_str(
            r#"
            [columns]
            well = "well_id"
            d = ["depth", "channel:D"]
            gr = "channel:GR"
            lith = "label"

            [labels]
            classes = ["A", "B", "C"]
            "#,
        )
        .unwrap()
    }

    fn seq(values: &[f64]) -> WellLogSequence {
        let depths = (0..values.len()).map(|i| i as f64).collect();
        WellLogSequence::new("w", depths, vec!["x".into()], vec![values.to_vec()], None, 1.0, 2)
            .unwrap()
    }

    #[test]
    fn schema_rejects_duplicates_and_singletons() {
        assert!(LabelSchema::new(["A"]).is_err());
        assert!(LabelSchema::new(["A", "a"]).is_err());
        assert!(LabelSchema::new(["A", " "]).is_err());
        assert_eq!(schema().index_of("b"), Some(1));
    }

    #[test]
    fn three_wells_ten_rows() {
        let csv = "well,d,gr,lith\n\
                   w1,1.0,10,A\nw2,5.0,11,B\nw1,0.5,12,A\nw3,2,13,C\nw2,4.5,14,B\n\
                   w1,1.5,15,B\nw3,3,16,C\nw3,4,17,A\nw2,5.5,18,A\nw1,2.0,19,C\n";
        let ds = read_dataset(csv.as_bytes(), &mapping()).unwrap();
        // oracle: count rows per well id straight from the text
        let mut expected: Vec<(String, usize)> = Vec::new();
        for line in csv.lines().skip(1) {
            let id = line.split(',').next().unwrap().to_string();
            match expected.iter_mut().find(|(w, _)| *w == id) {
                Some((_, n)) => *n += 1,
                None => expected.push((id, 1)),
            }
        }
        let got: Vec<(String, usize)> = ds
            .sequences
            .iter()
            .map(|s| (s.well_id().to_string(), s.len()))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(ds.total_samples(), 10);
        let w1 = ds.get("w1").unwrap();
        assert_eq!(w1.depths(), &[0.5, 1.0, 1.5, 2.0]);
        assert_eq!(w1.channel(1), &[12.0, 10.0, 15.0, 19.0]);
        assert_eq!(w1.channel(0), w1.depths());
        assert_eq!(w1.labels().unwrap(), &[0, 0, 1, 2]);
        assert_eq!(w1.channel_names(), &["D".to_string(), "GR".to_string()]);
    }

    #[test]
    fn single_row_file() {
        let ds = read_dataset("well,d,gr,lith\nx,3,1.5,B\n".as_bytes(), &mapping()).unwrap();
        assert_eq!(ds.sequences.len(), 1);
        assert_eq!(ds.sequences[0].len(), 1);
        assert_eq!(ds.sequences[0].sampling_interval(), 1.0);
    }

    #[test]
    fn load_errors() {
        let err = read_dataset("well,d,lith\nx,3,B\n".as_bytes(), &mapping()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("gr")), "{err}");

        let err = read_dataset("well,d,gr,lith\nx,3,1,Basalt\n".as_bytes(), &mapping()).unwrap_err();
        assert!(matches!(err, Error::Label(ref s) if s == "Basalt"));

        let err =
            read_dataset("well,d,gr,lith\nx,3,1,A\nx,3,2,A\n".as_bytes(), &mapping()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn missing_values_forward_filled() {
        let csv = "well,d,gr,lith\nx,1,,A\nx,2,7,A\nx,3,nan,A\nx,4,bad,B\nx,5,9,B\n";
        let ds = read_dataset(csv.as_bytes(), &mapping()).unwrap();
        assert_eq!(ds.sequences[0].channel(1), &[7.0, 7.0, 7.0, 7.0, 9.0]);
        assert_eq!(ds.report.imputed_cells, 3);
    }

    #[test]
    fn label_codes() {
        let m = ColumnMapping::from_toml_str(
            r#"
            [columns]
            well = "well_id"
            d = "depth"
            gr = "channel:GR"
            lith = "label"
            [labels]
            classes = ["A", "B"]
            codes = ["1", "2"]
            "#,
        )
        .unwrap();
        let ds = read_dataset("well,d,gr,lith\nx,1,1,2\nx,2,1,1\n".as_bytes(), &m).unwrap();
        assert_eq!(ds.sequences[0].labels().unwrap(), &[1, 0]);
        assert!(read_dataset("well,d,gr,lith\nx,1,1,3\n".as_bytes(), &m).is_err());
    }

    #[test]
    fn unknown_role_rejected() {
        let err = ColumnMapping::from_toml_str(
            "[columns]\nwell = \"wellname\"\n[labels]\nclasses = [\"A\",\"B\"]\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn normalization_stats() {
        let constant = seq(&[5.0, 5.0, 5.0]);
        let stats = fit_normalization(&[constant]).unwrap();
        assert_eq!(stats.mean, vec![5.0]);
        assert_eq!(stats.std, vec![1.0]);

        let stats = fit_normalization(&[seq(&[1.0, 2.0, 3.0])]).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        assert!((stats.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);

        assert!(fit_normalization(&[]).is_err());
    }

    #[test]
    fn two_channels_independent() {
        let s = WellLogSequence::new(
            "w",
            vec![0.0, 1.0],
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 2.0], vec![10.0, 10.0]],
            None,
            1.0,
            2,
        )
        .unwrap();
        let stats = fit_normalization(&[s]).unwrap();
        assert_eq!(stats.mean, vec![1.0, 10.0]);
        assert_eq!(stats.std, vec![1.0, 1.0]);
    }

    #[test]
    fn normalized_random_channel() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f64> = (0..100).map(|_| rng.gen_range(-50.0..250.0)).collect();
        let s = seq(&values);
        let stats = fit_normalization(std::slice::from_ref(&s)).unwrap();
        let z = normalize(&s, &stats).unwrap();
        let n = z.len() as f64;
        let mean: f64 = z.channel(0).iter().sum::<f64>() / n;
        let var: f64 = z.channel(0).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
        let at_mean = seq(&[stats.mean[0]]);
        assert_eq!(normalize(&at_mean, &stats).unwrap().value(0, 0), 0.0);
    }

    #[test]
    fn normalize_channel_mismatch() {
        let stats = fit_normalization(&[seq(&[1.0, 2.0])]).unwrap();
        let other = WellLogSequence::new("o", vec![0.0], vec!["y".into()], vec![vec![1.0]], None, 1.0, 2)
            .unwrap();
        assert!(normalize(&other, &stats).is_err());
    }

    #[test]
    fn stats_text_round_trip() {
        let stats = NormalizationStats {
            channel_names: vec!["GR".into(), "ILD,log".into()],
            mean: vec![60.123456789, 0.1 + 0.2],
            std: vec![13.0, 1e-7],
        };
        assert_eq!(NormalizationStats::from_text(&stats.to_text()).unwrap(), stats);
    }

    #[test]
    fn window_examples() {
        let s = seq(&[0.0; 16]);
        let w = make_windows(&s, 16, 16).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start, w[0].end), (0, 15));

        let s = seq(&[0.0; 10]);
        let spans: Vec<_> = make_windows(&s, 4, 4)
            .unwrap()
            .iter()
            .map(|w| (w.start, w.end))
            .collect();
        assert_eq!(spans, vec![(0, 3), (4, 7), (8, 9)]);

        let s = seq(&[0.0; 3]);
        let w = make_windows(&s, 16, 16).unwrap();
        assert_eq!((w[0].start, w[0].end, w[0].width()), (0, 2, 3));

        assert!(make_windows(&s, 0, 1).is_err());
        assert!(make_windows(&s, 2, 3).is_err());
    }

    #[test]
    fn split_validation() {
        let ds = read_dataset(
            "well,d,gr,lith\na,1,1,A\nb,1,1,A\nc,1,1,A\n".as_bytes(),
            &mapping(),
        )
        .unwrap();
        let ok = DatasetSplit {
            train: vec!["a".into()],
            val: vec!["b".into()],
            test: vec!["c".into()],
        };
        ok.validate(&ds).unwrap();
        let overlap = DatasetSplit {
            test: vec!["a".into()],
            ..ok.clone()
        };
        assert!(overlap.validate(&ds).is_err());
        let unknown = DatasetSplit {
            test: vec!["zz".into()],
            ..ok
        };
        assert!(unknown.validate(&ds).is_err());
    }

    proptest! {
        #[test]
        fn windows_tile_sequence(len in 1usize..200, width in 1usize..40, stride_frac in 0.0f64..1.0) {
            let stride = 1 + ((width - 1) as f64 * stride_frac) as usize;
            let s = seq(&vec![0.0; len]);
            let windows = make_windows(&s, width, stride).unwrap();
            let mut covered = vec![false; len];
            for w in &windows {
                prop_assert!(w.start <= w.end && w.end < len);
                prop_assert!(w.width() <= width);
                for t in w.indices() { covered[t] = true; }
            }
            prop_assert!(covered.iter().all(|&c| c));
        }

        #[test]
        fn normalize_round_trip(values in proptest::collection::vec(-1e4f64..1e4, 1..50)) {
            let s = seq(&values);
            let stats = fit_normalization(std::slice::from_ref(&s)).unwrap();
            let back = denormalize(&normalize(&s, &stats).unwrap(), &stats).unwrap();
            for (a, b) in back.channel(0).iter().zip(s.channel(0)) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn table_round_trip(
            wells in proptest::collection::vec(
                (1usize..20, proptest::collection::vec(-1e6f64..1e6, 40), proptest::collection::vec(0usize..3, 20)),
                1..4,
            )
        ) {
            let sch = schema();
            let seqs: Vec<WellLogSequence> = wells
                .iter()
                .enumerate()
                .map(|(i, (len, vals, labels))| {
                    let depths = (0..*len).map(|t| 100.0 + t as f64 * 0.5).collect();
                    let chans = vec![vals[..*len].to_vec(), vals[20..20 + *len].to_vec()];
                    WellLogSequence::new(
                        format!("well {i}"), depths, vec!["GR".into(), "PE".into()], chans,
                        Some(labels[..*len].to_vec()), 0.5, 3,
                    ).unwrap()
                })
                .collect();
            let mut buf = Vec::new();
            write_table(&mut buf, &seqs, &sch).unwrap();
            let mut mapping = canonical_mapping(seqs[0].channel_names(), &sch, true);
            mapping.options.sampling_interval = Some(0.5);
            let back = read_dataset(buf.as_slice(), &mapping).unwrap();
            prop_assert_eq!(back.sequences, seqs);
        }
    }
}

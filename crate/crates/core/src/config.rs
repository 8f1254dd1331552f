//! Pipeline configuration: one sectioned TOML file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::reasoning::{Persona, SamplingParams};
use crate::refine::GeologyGuidelines;
use crate::tools::ToolFlags;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Delimited table with one row per depth sample.
    pub table: PathBuf,
    /// Column mapping file.
    pub columns: PathBuf,
    pub knowledge: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Mlp,
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseSection {
    pub kind: BaseKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for BaseSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: BaseKind::Mlp,
            hidden: t.hidden,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: t.patience,
        }
    }
}

/// Either a fixed threshold or `"calibrated"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSetting {
    Fixed(f64),
    Named(TauKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauKeyword {
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSection {
    pub tau: TauSetting,
    pub epsilon: f64,
    pub grid_points: usize,
}

impl Default for RoutingSection {
    fn default() -> Self {
        Self {
            tau: TauSetting::Named(TauKeyword::Calibrated),
            epsilon: 0.01,
            grid_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolsSection {
    pub knowledge: bool,
    pub trend: bool,
    pub neighbors: bool,
    pub history: bool,
    /// Context radius for trend analysis, in depth steps.
    pub trend_radius: usize,
    pub neighbors_k: usize,
    pub history_depth: usize,
    /// Most probable classes per depth described in the knowledge excerpt.
    pub knowledge_classes: usize,
}

impl Default for ToolsSection {
    fn default() -> Self {
        Self {
            knowledge: true,
            trend: true,
            neighbors: true,
            history: true,
            trend_radius: 8,
            neighbors_k: 5,
            history_depth: 4,
            knowledge_classes: 3,
        }
    }
}

impl ToolsSection {
    pub fn flags(&self) -> ToolFlags {
        ToolFlags {
            knowledge: self.knowledge,
            trend: self.trend,
            neighbors: self.neighbors,
            history: self.history,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReasoningSection {
    pub personas: Vec<String>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub votes: usize,
    /// Character cap on each persona prompt; 0 disables it.
    pub prompt_budget: usize,
}

impl Default for ReasoningSection {
    fn default() -> Self {
        let s = SamplingParams::default();
        Self {
            personas: Persona::ALL.iter().map(|p| p.key().to_string()).collect(),
            temperature: s.temperature,
            top_p: s.top_p,
            max_tokens: s.max_tokens,
            votes: s.votes,
            prompt_budget: 24_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineKind {
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothScope {
    /// Smooth the assembled label sequence of the whole well.
    Well,
    /// Smooth each routed window on its own.
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementSection {
    pub enabled: bool,
    pub method: RefineKind,
    pub min_run: usize,
    pub scope: SmoothScope,
    pub rules: Option<Vec<String>>,
}

impl Default for RefinementSection {
    fn default() -> Self {
        Self {
            enabled: true,
            method: RefineKind::Deterministic,
            min_run: 2,
            scope: SmoothScope::Well,
            rules: None,
        }
    }
}

impl RefinementSection {
    pub fn guidelines(&self) -> GeologyGuidelines {
        let mut g = GeologyGuidelines::default();
        if let Some(rules) = &self.rules {
            g.rules = rules.clone();
        }
        g.min_run = self.min_run;
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowsSection {
    /// Depth context seen by the base classifier.
    pub base: usize,
    /// Width of the windows sent to reasoning.
    pub refine: usize,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self { base: 16, refine: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_root: PathBuf,
    /// Worker threads across wells; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub base: BaseSection,
    #[serde(default)]
    pub routing: RoutingSection,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default)]
    pub reasoning: ReasoningSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub refinement: RefinementSection,
    #[serde(default)]
    pub windows: WindowsSection,
}

fn default_seed() -> u64 {
    17
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.table);
        fix(&mut self.data.columns);
        if let Some(k) = &mut self.data.knowledge {
            fix(k);
        }
        fix(&mut self.output_root);
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.windows.base == 0 || self.windows.refine == 0 {
            return bad("window widths must be positive".into());
        }
        if let TauSetting::Fixed(t) = self.routing.tau {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("routing.tau must be in [0, 1], got {t}"));
            }
        }
        if !(self.routing.epsilon >= 0.0) {
            return bad("routing.epsilon must be >= 0".into());
        }
        if self.routing.grid_points < 2 {
            return bad("routing.grid_points must be >= 2".into());
        }
        if self.tools.neighbors_k == 0 || self.tools.history_depth == 0 {
            return bad("tools.neighbors_k and tools.history_depth must be positive".into());
        }
        if self.tools.knowledge && self.data.knowledge.is_none() {
            return bad("tools.knowledge is on but data.knowledge is not set".into());
        }
        self.personas()?;
        self.sampling().validate()?;
        self.refinement.guidelines().validate()?;
        self.train_config().validate()
    }

    pub fn personas(&self) -> Result<Vec<Persona>> {
        if self.reasoning.personas.is_empty() {
            return Err(Error::Config("reasoning.personas is empty".into()));
        }
        self.reasoning
            .personas
            .iter()
            .map(|k| Persona::from_key(k).ok_or_else(|| Error::Config(format!("unknown persona '{k}'"))))
            .collect()
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.reasoning.temperature,
            top_p: self.reasoning.top_p,
            max_tokens: self.reasoning.max_tokens,
            seed: self.seed,
            votes: self.reasoning.votes,
        }
    }

    pub fn prompt_budget(&self) -> Option<usize> {
        (self.reasoning.prompt_budget > 0).then_some(self.reasoning.prompt_budget)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.base.hidden,
            learning_rate: self.base.learning_rate,
            epochs: self.base.epochs,
            batch_size: self.base.batch_size,
            seed: self.seed,
            patience: self.base.patience,
            window: self.windows.base,
        }
    }

    /// Sets a dotted key such as `routing.tau` from its TOML literal
    /// (a bare word is taken as a string).
    pub fn with_override(&self, key: &str, literal: &str) -> Result<Self> {
        let mut doc: toml::Value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {literal}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(literal.to_string()));
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::Config("empty key".into()))?;
        let mut node = &mut doc;
        for part in parts {
            node = node
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config section '{part}' in '{key}'")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{key}' does not name a config key")))?;
        table.insert(leaf.to_string(), value);
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Short stable digest of serializable values, used to key stage directories.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(&Sha256::digest(bytes)[..6])
}

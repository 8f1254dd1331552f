use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbabilityVector;

use super::history::HistoryWindow;
use super::kb::KnowledgeExcerpt;
use super::neighbors::NeighborSet;
use super::trend::TrendSummary;

/// Which evidence tools are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolFlags {
    pub knowledge: bool,
    pub trend: bool,
    pub neighbors: bool,
    pub history: bool,
}

impl Default for ToolFlags {
    fn default() -> Self {
        Self::all()
    }
}

impl ToolFlags {
    pub fn all() -> Self {
        Self {
            knowledge: true,
            trend: true,
            neighbors: true,
            history: true,
        }
    }

    pub fn none() -> Self {
        Self {
            knowledge: false,
            trend: false,
            neighbors: false,
            history: false,
        }
    }

    /// Compact tag used in audit files, e.g. `K-N-` for knowledge + neighbors.
    pub fn tag(&self) -> String {
        [(self.knowledge, 'K'), (self.trend, 'T'), (self.neighbors, 'N'), (self.history, 'H')]
            .iter()
            .map(|&(on, c)| if on { c } else { '-' })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceProfile {
    pub well_id: String,
    pub start: usize,
    pub end: usize,
    pub depths: Vec<f64>,
    pub channel_names: Vec<String>,
    /// `values[i][c]` for depth `start + i`.
    pub values: Vec<Vec<f64>>,
    pub base_probs: Vec<ProbabilityVector>,
    pub knowledge: Option<KnowledgeExcerpt>,
    pub trend: Option<TrendSummary>,
    /// One set per depth of the window.
    pub neighbors: Option<Vec<NeighborSet>>,
    pub history: Option<HistoryWindow>,
    pub flags: ToolFlags,
}

impl EvidenceProfile {
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn base_argmax(&self) -> Vec<usize> {
        self.base_probs.iter().map(ProbabilityVector::argmax).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let mismatch = |tool: &str, flag: bool| {
            Err(Error::Evidence(format!(
                "{tool} flag is {flag} but the {tool} field is {}",
                if flag { "absent" } else { "present" }
            )))
        };
        let f = self.flags;
        if f.knowledge != self.knowledge.is_some() {
            return mismatch("knowledge", f.knowledge);
        }
        if f.trend != self.trend.is_some() {
            return mismatch("trend", f.trend);
        }
        if f.neighbors != self.neighbors.is_some() {
            return mismatch("neighbors", f.neighbors);
        }
        if f.history != self.history.is_some() {
            return mismatch("history", f.history);
        }
        if self.end < self.start {
            return Err(Error::Evidence(format!("window end {} before start {}", self.end, self.start)));
        }
        let w = self.width();
        if self.values.len() != w || self.base_probs.len() != w || self.depths.len() != w {
            return Err(Error::Evidence(format!(
                "window of width {w} has {} value rows, {} probability vectors, {} depths",
                self.values.len(),
                self.base_probs.len(),
                self.depths.len()
            )));
        }
        if let Some(n) = &self.neighbors {
            if n.len() != w {
                return Err(Error::Evidence(format!("{} neighbor sets for window of width {w}", n.len())));
            }
        }
        Ok(())
    }
}

/// Raw window contents shared by every profile.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEvidence {
    pub well_id: String,
    pub start: usize,
    pub depths: Vec<f64>,
    pub channel_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub base_probs: Vec<ProbabilityVector>,
}

pub fn build_evidence_profile(
    window: WindowEvidence,
    knowledge: Option<KnowledgeExcerpt>,
    trend: Option<TrendSummary>,
    neighbors: Option<Vec<NeighborSet>>,
    history: Option<HistoryWindow>,
    flags: ToolFlags,
) -> Result<EvidenceProfile> {
    if window.values.is_empty() {
        return Err(Error::Evidence("empty window".into()));
    }
    let profile = EvidenceProfile {
        well_id: window.well_id,
        start: window.start,
        end: window.start + window.values.len() - 1,
        depths: window.depths,
        channel_names: window.channel_names,
        values: window.values,
        base_probs: window.base_probs,
        knowledge,
        trend,
        neighbors,
        history,
        flags,
    };
    profile.check()?;
    Ok(profile)
}

//! Expert knowledge base: feature and label descriptions plus decision guidelines.
//!
//! File format is sectioned plain text. A section starts with a header line
//! `FEATURE <name>`, `LABEL <name>` or `GUIDELINE <n>` and runs until the next
//! header. Lines starting with `#` are comments. A `FEATURE` section with an
//! empty body records that the channel deliberately has no entry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabelSchema;
use crate::error::{Error, Result};

pub const NO_ENTRY: &str = "(no entry)";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub features: Vec<(String, String)>,
    pub labels: Vec<(String, String)>,
    /// Sorted by guideline number.
    pub guidelines: Vec<(u32, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeExcerpt {
    pub features: Vec<(String, String)>,
    pub labels: Vec<(String, String)>,
    pub guidelines: Vec<String>,
}

enum Section {
    Feature(String),
    Label(String),
    Guideline(u32),
}

impl KnowledgeBase {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kb = KnowledgeBase::default();
        let mut current: Option<(Section, Vec<&str>)> = None;

        fn flush(kb: &mut KnowledgeBase, section: Option<(Section, Vec<&str>)>) {
            let Some((section, body)) = section else { return };
            let body = body.join("\n").trim().to_string();
            match section {
                Section::Feature(name) => kb.features.push((name, body)),
                Section::Label(name) => kb.labels.push((name, body)),
                Section::Guideline(n) => kb.guidelines.push((n, body)),
            }
        }

        for (lineno, line) in text.lines().enumerate() {
            if line.trim_start().starts_with('#') {
                continue;
            }
            let header = if let Some(name) = line.strip_prefix("FEATURE ") {
                Some(Section::Feature(name.trim().to_string()))
            } else if let Some(name) = line.strip_prefix("LABEL ") {
                Some(Section::Label(name.trim().to_string()))
            } else if let Some(n) = line.strip_prefix("GUIDELINE ") {
                let n = n.trim().parse().map_err(|_| {
                    Error::Knowledge(format!("line {}: bad guideline number '{}'", lineno + 1, n.trim()))
                })?;
                Some(Section::Guideline(n))
            } else {
                None
            };
            match header {
                Some(section) => {
                    flush(&mut kb, current.take());
                    let duplicate = match &section {
                        Section::Feature(n) => n.is_empty() || kb.features.iter().any(|(f, _)| f == n),
                        Section::Label(n) => n.is_empty() || kb.labels.iter().any(|(l, _)| l == n),
                        Section::Guideline(n) => kb.guidelines.iter().any(|(g, _)| g == n),
                    };
                    if duplicate {
                        return Err(Error::Knowledge(format!(
                            "line {}: duplicate or empty header '{}'",
                            lineno + 1,
                            line.trim()
                        )));
                    }
                    current = Some((section, Vec::new()));
                }
                None => match &mut current {
                    Some((_, body)) => body.push(line),
                    None if line.trim().is_empty() => {}
                    None => {
                        return Err(Error::Knowledge(format!(
                            "line {}: text before the first section header",
                            lineno + 1
                        )))
                    }
                },
            }
        }
        flush(&mut kb, current);
        kb.guidelines.sort_by_key(|(n, _)| *n);
        Ok(kb)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn feature(&self, name: &str) -> Option<&str> {
        self.features
            .iter()
            .find(|(f, _)| f.eq_ignore_ascii_case(name))
            .map(|(_, d)| d.as_str())
    }

    pub fn label(&self, name: &str) -> Option<&str> {
        self.labels
            .iter()
            .find(|(l, _)| l.eq_ignore_ascii_case(name))
            .map(|(_, d)| d.as_str())
    }

    /// Checks the base against the active schema. Every class needs a label
    /// description; channels without a `FEATURE` section are returned.
    pub fn validate(&self, schema: &LabelSchema, channels: &[String]) -> Result<Vec<String>> {
        for name in schema.names() {
            if self.label(name).is_none() {
                return Err(Error::Knowledge(format!("no LABEL entry for class '{name}'")));
            }
        }
        Ok(channels
            .iter()
            .filter(|c| self.feature(c).is_none())
            .cloned()
            .collect())
    }
}

/// Descriptions for exactly the requested channels and classes, plus every
/// guideline, in request order.
pub fn kb_lookup(
    kb: &KnowledgeBase,
    schema: &LabelSchema,
    channels: &[String],
    classes: &[usize],
) -> Result<KnowledgeExcerpt> {
    let features = channels
        .iter()
        .map(|c| {
            let desc = kb
                .feature(c)
                .ok_or_else(|| Error::Knowledge(format!("unknown channel '{c}'")))?;
            let desc = if desc.is_empty() { NO_ENTRY } else { desc };
            Ok((c.clone(), desc.to_string()))
        })
        .collect::<Result<_>>()?;
    let labels = classes
        .iter()
        .map(|&k| {
            if k >= schema.num_classes() {
                return Err(Error::Knowledge(format!("unknown class index {k}")));
            }
            let name = schema.name(k);
            let desc = kb
                .label(name)
                .ok_or_else(|| Error::Knowledge(format!("unknown class '{name}'")))?;
            Ok((name.to_string(), desc.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(KnowledgeExcerpt {
        features,
        labels,
        guidelines: kb.guidelines.iter().map(|(_, g)| g.clone()).collect(),
    })
}

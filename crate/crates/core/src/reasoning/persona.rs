use serde::{Deserialize, Serialize};

use super::prompt::Section;

/// A reasoning configuration with a fixed inductive bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Persona {
    DataCentricAnalyst,
    ContextAwareStratigrapher,
    RuleBasedPhysicist,
}

impl Persona {
    /// Panel order.
    pub const ALL: [Persona; 3] = [
        Persona::DataCentricAnalyst,
        Persona::ContextAwareStratigrapher,
        Persona::RuleBasedPhysicist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Persona::DataCentricAnalyst => "DataCentricAnalyst",
            Persona::ContextAwareStratigrapher => "ContextAwareStratigrapher",
            Persona::RuleBasedPhysicist => "RuleBasedPhysicist",
        }
    }

    /// Short name used in configs and audit columns.
    pub fn key(self) -> &'static str {
        match self {
            Persona::DataCentricAnalyst => "analyst",
            Persona::ContextAwareStratigrapher => "stratigrapher",
            Persona::RuleBasedPhysicist => "physicist",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.key().eq_ignore_ascii_case(key) || p.name().eq_ignore_ascii_case(key))
    }

    pub fn template_id(self) -> &'static str {
        match self {
            Persona::DataCentricAnalyst => "persona/analyst/v1",
            Persona::ContextAwareStratigrapher => "persona/stratigrapher/v1",
            Persona::RuleBasedPhysicist => "persona/physicist/v1",
        }
    }

    /// Sections rendered first, in this order.
    pub fn emphasis(self) -> &'static [Section] {
        match self {
            Persona::DataCentricAnalyst => &[Section::BaseProbs, Section::Neighbors],
            Persona::ContextAwareStratigrapher => &[Section::Trend, Section::History],
            Persona::RuleBasedPhysicist => &[Section::Knowledge],
        }
    }

    pub fn bias(self) -> &'static str {
        match self {
            Persona::DataCentricAnalyst => {
                "You are a quantitative log analyst. Weigh the measured values, the base model's \
                 class probabilities and the labels of the most similar reference samples. Prefer \
                 the class the numbers support, even when it breaks a tidy sequence."
            }
            Persona::ContextAwareStratigrapher => {
                "You are a stratigrapher. Read the window as part of a vertical succession: use the \
                 trend of each log around the window and the labels already assigned just above it. \
                 Prefer interpretations that keep beds coherent and transitions gradual unless the \
                 logs show a sharp contact."
            }
            Persona::RuleBasedPhysicist => {
                "You are a petrophysicist. Check every depth against the physical meaning of each \
                 log and the class descriptions and guidelines you are given. Reject classes whose \
                 expected log response contradicts the measurements."
            }
        }
    }
}

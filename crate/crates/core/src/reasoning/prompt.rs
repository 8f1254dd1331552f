//! Prompt rendering. The user text is a sequence of `## <SECTION>` blocks so
//! both people and the offline backend can find each piece of evidence.

use serde::{Deserialize, Serialize};

use crate::data::LabelSchema;
use crate::tools::EvidenceProfile;

use super::persona::Persona;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Section {
    WindowValues,
    BaseProbs,
    Knowledge,
    Trend,
    Neighbors,
    History,
}

impl Section {
    pub const DEFAULT_ORDER: [Section; 6] = [
        Section::WindowValues,
        Section::BaseProbs,
        Section::Knowledge,
        Section::Trend,
        Section::Neighbors,
        Section::History,
    ];

    /// First dropped first when over budget; window values are never dropped.
    pub const DROP_ORDER: [Section; 5] = [
        Section::Neighbors,
        Section::Trend,
        Section::History,
        Section::Knowledge,
        Section::BaseProbs,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Section::WindowValues => "WINDOW VALUES",
            Section::BaseProbs => "BASE PROBABILITIES",
            Section::Knowledge => "KNOWLEDGE",
            Section::Trend => "TREND",
            Section::Neighbors => "NEIGHBORS",
            Section::History => "HISTORY",
        }
    }

    pub fn marker(self) -> String {
        format!("## {}", self.title())
    }
}

/// Number of classes listed per depth in the probability section.
const TOP_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub sections: Vec<Section>,
    pub dropped: Vec<Section>,
    pub warnings: Vec<String>,
}

/// Instructions describing the machine-readable answer block.
pub fn answer_format(start: usize, end: usize, schema: &LabelSchema) -> String {
    format!(
        "Valid labels: {}.\n\
         End your reply with a fenced block tagged `answer` that holds exactly one line per depth \
         index from {start} to {end}, each of the form `<depth index>: <LABEL>`:\n\
         ```answer\n{start}: <LABEL>\n...\n{end}: <LABEL>\n```",
        schema.names().join(", ")
    )
}

pub const FORMAT_REMINDER: &str = "\n\nYour previous reply had no readable answer block. Reply again \
and finish with the fenced `answer` block exactly as specified: one `<depth index>: <LABEL>` line per \
depth and nothing else inside the block.";

fn section_body(section: Section, p: &EvidenceProfile, schema: &LabelSchema) -> Option<String> {
    let mut out = String::new();
    match section {
        Section::WindowValues => {
            out.push_str(&format!("well {}, depth indices {}..{}\n", p.well_id, p.start, p.end));
            out.push_str(&format!("index | depth | {}\n", p.channel_names.join(" | ")));
            for (i, row) in p.values.iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                out.push_str(&format!("{} | {:.4} | {}\n", p.start + i, p.depths[i], vals.join(" | ")));
            }
        }
        Section::BaseProbs => {
            for (i, probs) in p.base_probs.iter().enumerate() {
                let top: Vec<String> = probs
                    .ranked()
                    .into_iter()
                    .take(TOP_CLASSES)
                    .map(|c| format!("{} {:.3}", schema.name(c), probs.get(c)))
                    .collect();
                out.push_str(&format!("{}: {}\n", p.start + i, top.join(", ")));
            }
        }
        Section::Knowledge => {
            let k = p.knowledge.as_ref()?;
            out.push_str("Logs:\n");
            for (name, desc) in &k.features {
                out.push_str(&format!("- {name}: {}\n", desc.replace('\n', " ")));
            }
            out.push_str("Candidate classes:\n");
            for (name, desc) in &k.labels {
                out.push_str(&format!("- {name}: {}\n", desc.replace('\n', " ")));
            }
            if !k.guidelines.is_empty() {
                out.push_str("Guidelines:\n");
                for (i, g) in k.guidelines.iter().enumerate() {
                    out.push_str(&format!("{}. {}\n", i + 1, g.replace('\n', " ")));
                }
            }
        }
        Section::Trend => {
            let t = p.trend.as_ref()?;
            out.push_str(&format!(
                "context depth indices {}..{} (radius {})\n",
                t.context_start, t.context_end, t.radius
            ));
            for ch in &t.channels {
                out.push_str(&format!(
                    "{}: {}, slope {:.4}/step, mean {:.4}, std {:.4}, largest step {:.4}\n",
                    ch.channel,
                    ch.regime.as_str(),
                    ch.slope,
                    ch.mean,
                    ch.std,
                    ch.max_step
                ));
            }
        }
        Section::Neighbors => {
            let sets = p.neighbors.as_ref()?;
            for (i, set) in sets.iter().enumerate() {
                let items: Vec<String> = set
                    .neighbors
                    .iter()
                    .map(|n| format!("{} ({:.3})", schema.name(n.label), n.distance))
                    .collect();
                out.push_str(&format!("{}: {}\n", p.start + i, items.join(", ")));
            }
        }
        Section::History => {
            let h = p.history.as_ref()?;
            if h.labels.is_empty() {
                out.push_str("none (top of well)\n");
            } else {
                let names: Vec<&str> = h.labels.iter().map(|&l| schema.name(l)).collect();
                out.push_str(&format!("labels directly above, nearest first: {}\n", names.join(", ")));
            }
        }
    }
    Some(out)
}

/// Persona-emphasised sections first, then the rest in default order.
pub fn section_order(persona: Persona) -> Vec<Section> {
    let mut order: Vec<Section> = persona.emphasis().to_vec();
    order.extend(Section::DEFAULT_ORDER.iter().filter(|s| !persona.emphasis().contains(s)));
    order
}

/// Renders the (system, user) pair for one persona. `budget` caps the user
/// text length in characters; sections are dropped in [`Section::DROP_ORDER`]
/// until it fits.
pub fn render_persona_prompt(
    persona: Persona,
    profile: &EvidenceProfile,
    schema: &LabelSchema,
    budget: Option<usize>,
) -> RenderedPrompt {
    let system = format!(
        "{}\n\nYou receive evidence about a short window of depths from one well. Assign a \
         lithology class to every depth and explain your reasoning briefly.\n\n{}",
        persona.bias(),
        answer_format(profile.start, profile.end, schema)
    );

    let mut warnings = Vec::new();
    let mut bodies: Vec<(Section, String)> = Vec::new();
    for section in section_order(persona) {
        match section_body(section, profile, schema) {
            Some(body) => bodies.push((section, body)),
            None if persona.emphasis().contains(&section) => warnings.push(format!(
                "{}: emphasised section {} is not available",
                persona.name(),
                section.title()
            )),
            None => {}
        }
    }

    let join = |bodies: &[(Section, String)]| {
        bodies
            .iter()
            .map(|(s, b)| format!("{}\n{}", s.marker(), b))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut user = join(&bodies);
    let mut dropped = Vec::new();
    if let Some(limit) = budget {
        for victim in Section::DROP_ORDER {
            if user.len() <= limit {
                break;
            }
            if let Some(pos) = bodies.iter().position(|(s, _)| *s == victim) {
                bodies.remove(pos);
                dropped.push(victim);
                user = join(&bodies);
            }
        }
        if user.len() > limit {
            warnings.push(format!("prompt still exceeds budget of {limit} characters"));
        }
    }

    RenderedPrompt {
        system,
        user,
        sections: bodies.iter().map(|(s, _)| *s).collect(),
        dropped,
        warnings,
    }
}

/// Splits rendered text into `(title, body)` pairs at `## ` markers.
pub(crate) fn split_sections(text: &str) -> Vec<(&str, Vec<&str>)> {
    let mut out: Vec<(&str, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        if let Some(title) = line.strip_prefix("## ") {
            out.push((title.trim(), Vec::new()));
        } else if let Some((_, body)) = out.last_mut() {
            body.push(line);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProbabilityVector;
    use crate::tools::{
        build_evidence_profile, HistoryWindow, KnowledgeExcerpt, Neighbor, NeighborSet, ToolFlags, TrendSummary,
        WindowEvidence,
    };

    fn schema() -> LabelSchema {
        LabelSchema::new(["SS", "SH", "LS"]).unwrap()
    }

    pub(crate) fn profile(flags: ToolFlags) -> EvidenceProfile {
        let window = WindowEvidence {
            well_id: "W".into(),
            start: 8,
            depths: vec![10.0, 10.5],
            channel_names: vec!["GR".into(), "PE".into()],
            values: vec![vec![60.0, 3.1], vec![95.0, 3.4]],
            base_probs: vec![
                ProbabilityVector::new(vec![0.6, 0.3, 0.1]).unwrap(),
                ProbabilityVector::new(vec![0.2, 0.5, 0.3]).unwrap(),
            ],
        };
        let nset = NeighborSet {
            neighbors: vec![Neighbor {
                index: 0,
                features: vec![0.0, 0.0],
                label: 2,
                distance: 0.25,
            }],
        };
        build_evidence_profile(
            window,
            flags.knowledge.then(|| KnowledgeExcerpt {
                features: vec![("GR".into(), "gamma".into())],
                labels: vec![("SS".into(), "sand".into())],
                guidelines: vec!["keep beds thick".into()],
            }),
            flags.trend.then(|| TrendSummary {
                start: 8,
                end: 9,
                context_start: 4,
                context_end: 13,
                radius: 4,
                channels: vec![],
            }),
            flags.neighbors.then(|| vec![nset.clone(), nset]),
            flags.history.then(|| HistoryWindow { labels: vec![1, 0] }),
            flags,
        )
        .unwrap()
    }

    fn pos(text: &str, s: Section) -> usize {
        text.find(&s.marker()).unwrap_or(usize::MAX)
    }

    #[test]
    fn deterministic() {
        let p = profile(ToolFlags::all());
        for persona in Persona::ALL {
            assert_eq!(
                render_persona_prompt(persona, &p, &schema(), None),
                render_persona_prompt(persona, &p, &schema(), None)
            );
        }
    }

    #[test]
    fn emphasis_ordering() {
        let p = profile(ToolFlags::all());
        let a = render_persona_prompt(Persona::DataCentricAnalyst, &p, &schema(), None).user;
        assert!(pos(&a, Section::Neighbors) < pos(&a, Section::Trend));
        assert!(a.starts_with(&Section::BaseProbs.marker()));
        let s = render_persona_prompt(Persona::ContextAwareStratigrapher, &p, &schema(), None).user;
        assert!(s.starts_with(&Section::Trend.marker()));
        assert!(pos(&s, Section::History) < pos(&s, Section::WindowValues));
        let k = render_persona_prompt(Persona::RuleBasedPhysicist, &p, &schema(), None).user;
        assert!(k.starts_with(&Section::Knowledge.marker()));
    }

    #[test]
    fn fully_ablated_prompt() {
        let p = profile(ToolFlags::none());
        let r = render_persona_prompt(Persona::RuleBasedPhysicist, &p, &schema(), None);
        let titles: Vec<&str> = split_sections(&r.user).iter().map(|(t, _)| *t).collect();
        assert_eq!(titles, vec!["WINDOW VALUES", "BASE PROBABILITIES"]);
        assert!(r.system.contains("```answer"));
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn budget_drops_in_priority_order() {
        let p = profile(ToolFlags::all());
        let full = render_persona_prompt(Persona::DataCentricAnalyst, &p, &schema(), None);
        let r = render_persona_prompt(Persona::DataCentricAnalyst, &p, &schema(), Some(full.user.len() - 1));
        assert_eq!(r.dropped, vec![Section::Neighbors]);
        let tiny = render_persona_prompt(Persona::DataCentricAnalyst, &p, &schema(), Some(1));
        assert_eq!(tiny.dropped, Section::DROP_ORDER.to_vec());
        assert_eq!(tiny.sections, vec![Section::WindowValues]);
        assert!(!tiny.warnings.is_empty());
    }
}

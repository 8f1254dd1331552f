//! Final reconciliation of persona candidates under continuity constraints.

use serde::{Deserialize, Serialize};

use crate::data::LabelSchema;
use crate::error::{Error, Result};
use crate::model::ProbabilityVector;
use crate::reasoning::prompt::{answer_format, FORMAT_REMINDER};
use crate::reasoning::{majority_vote, parse_answer, CandidatePrediction, ReasonerBackend, SamplingParams};
use crate::tools::EvidenceProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeologyGuidelines {
    pub rules: Vec<String>,
    /// Shortest run the deterministic smoother leaves in place.
    pub min_run: usize,
}

impl Default for GeologyGuidelines {
    fn default() -> Self {
        Self {
            rules: vec![
                "Lithology changes in beds that span several consecutive samples; a single sample \
                 that differs from both neighbours is usually noise."
                    .into(),
                "Favour transitions between classes that are deposited next to each other; a jump \
                 between unrelated classes needs a sharp change in the logs to justify it."
                    .into(),
                "When candidates disagree, prefer the label that keeps the window consistent with \
                 the depths directly above and below."
                    .into(),
            ],
            min_run: 2,
        }
    }
}

impl GeologyGuidelines {
    pub fn validate(&self) -> Result<()> {
        if self.min_run == 0 {
            return Err(Error::Config("min_run must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineMethod {
    /// Backend reconciled conflicting candidates.
    Llm,
    /// Run-length smoother over candidate plurality or base labels.
    Deterministic,
    /// Base-classifier label kept.
    BasePassthrough,
    /// All readable candidates agreed; no reconciliation needed.
    Unanimous,
    /// Per-depth plurality of candidates, refinement disabled.
    Plurality,
}

impl RefineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RefineMethod::Llm => "llm",
            RefineMethod::Deterministic => "deterministic",
            RefineMethod::BasePassthrough => "base-passthrough",
            RefineMethod::Unanimous => "unanimous",
            RefineMethod::Plurality => "plurality",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedWindow {
    pub labels: Vec<usize>,
    pub method: RefineMethod,
    pub rationale: Option<String>,
    pub raw: Vec<String>,
    pub backend_error: Option<String>,
}

/// Maximal runs as `(label, start, len)`.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some((label, _, len)) if *label == l => *len += 1,
            _ => out.push((l, i, 1)),
        }
    }
    out
}

/// Relabels runs shorter than `min_run` until none remain (or one run is
/// left). The shortest run goes first, interior runs before edge runs, then
/// the shallowest; it takes the label of its longer neighbour, the shallower
/// one on a tie.
pub fn refine_deterministic(labels: &[usize], min_run: usize) -> Vec<usize> {
    let mut out = labels.to_vec();
    loop {
        let rs = runs(&out);
        if rs.len() < 2 {
            return out;
        }
        let Some(victim) = (0..rs.len())
            .filter(|&i| rs[i].2 < min_run)
            .min_by_key(|&i| (rs[i].2, i == 0 || i == rs.len() - 1, i))
        else {
            return out;
        };
        let above = victim.checked_sub(1).map(|i| rs[i]);
        let below = rs.get(victim + 1).copied();
        let target = match (above, below) {
            (Some(a), Some(b)) => {
                if b.2 > a.2 {
                    b.0
                } else {
                    a.0
                }
            }
            (Some(a), None) => a.0,
            (None, Some(b)) => b.0,
            (None, None) => unreachable!("at least two runs"),
        };
        let (_, start, len) = rs[victim];
        out[start..start + len].fill(target);
    }
}

/// Share of depths forming a run of length one. Zero for a single sample.
pub fn flying_point_ratio(labels: &[usize]) -> f64 {
    if labels.len() < 2 {
        return 0.0;
    }
    let isolated = runs(labels).iter().filter(|r| r.2 == 1).count();
    isolated as f64 / labels.len() as f64
}

/// Per-depth plurality across readable candidates; ties go to the higher base
/// probability. Base argmax when no candidate is readable.
pub fn candidate_plurality(candidates: &[CandidatePrediction], base_probs: &[ProbabilityVector]) -> Vec<usize> {
    let runs: Vec<Vec<usize>> = candidates.iter().filter(|c| c.parsed()).map(|c| c.labels.clone()).collect();
    if runs.is_empty() {
        return base_probs.iter().map(ProbabilityVector::argmax).collect();
    }
    majority_vote(&runs, base_probs)
}

pub fn render_refine_prompt(
    profile: &EvidenceProfile,
    candidates: &[&CandidatePrediction],
    schema: &LabelSchema,
    guidelines: &GeologyGuidelines,
) -> (String, String) {
    let system = format!(
        "You are the final reviewer of a lithology interpretation. Several specialists labelled the \
         same window of depths and disagree. Resolve the conflicts so the result is geologically \
         plausible, following the guidelines.\n\n{}",
        answer_format(profile.start, profile.end, schema)
    );
    let mut user = String::from("## WINDOW VALUES\n");
    user.push_str(&format!("well {}, depth indices {}..{}\n", profile.well_id, profile.start, profile.end));
    user.push_str(&format!("index | depth | {}\n", profile.channel_names.join(" | ")));
    for (i, row) in profile.values.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        user.push_str(&format!("{} | {:.4} | {}\n", profile.start + i, profile.depths[i], vals.join(" | ")));
    }
    user.push_str("## CANDIDATES\n");
    for c in candidates {
        let names: Vec<&str> = c.labels.iter().map(|&l| schema.name(l)).collect();
        user.push_str(&format!("{}: {}\n", c.persona.name(), names.join(", ")));
    }
    user.push_str("## GUIDELINES\n");
    for (i, rule) in guidelines.rules.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, rule));
    }
    (system, user)
}

/// Reconciles persona candidates with the backend. Unanimous candidates skip
/// the call; an unreadable reply (after one retry) or a backend error falls
/// back to smoothing the candidate plurality.
pub fn refine_llm(
    backend: &dyn ReasonerBackend,
    profile: &EvidenceProfile,
    candidates: &[CandidatePrediction],
    schema: &LabelSchema,
    guidelines: &GeologyGuidelines,
    params: &SamplingParams,
) -> Result<RefinedWindow> {
    guidelines.validate()?;
    let readable: Vec<&CandidatePrediction> = candidates.iter().filter(|c| c.parsed()).collect();
    let deterministic = |labels: Vec<usize>, raw, backend_error| RefinedWindow {
        labels: refine_deterministic(&labels, guidelines.min_run),
        method: RefineMethod::Deterministic,
        rationale: None,
        raw,
        backend_error,
    };
    if readable.is_empty() {
        return Ok(deterministic(profile.base_argmax(), Vec::new(), None));
    }
    if readable.iter().all(|c| c.labels == readable[0].labels) {
        return Ok(RefinedWindow {
            labels: readable[0].labels.clone(),
            method: RefineMethod::Unanimous,
            rationale: None,
            raw: Vec::new(),
            backend_error: None,
        });
    }

    let (system, user) = render_refine_prompt(profile, &readable, schema, guidelines);
    let mut raw = Vec::new();
    for attempt in 0..2 {
        let mut text = user.clone();
        if attempt == 1 {
            text.push_str(FORMAT_REMINDER);
        }
        let reply = match backend.complete(&params.request(&system, &text, params.seed)) {
            Ok(r) => r,
            Err(e) => {
                let plural = candidate_plurality(candidates, &profile.base_probs);
                return Ok(deterministic(plural, raw, Some(e.to_string())));
            }
        };
        let parsed = parse_answer(&reply, schema, profile.start, profile.width());
        raw.push(reply);
        if let Ok(a) = parsed {
            return Ok(RefinedWindow {
                labels: a.labels,
                method: RefineMethod::Llm,
                rationale: Some(a.rationale),
                raw,
                backend_error: None,
            });
        }
    }
    let plural = candidate_plurality(candidates, &profile.base_probs);
    Ok(deterministic(plural, raw, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::{MockBackend, ParseStatus, Persona, ScriptedBackend};
    use crate::tools::{build_evidence_profile, ToolFlags, WindowEvidence};
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;

    #[test]
    fn smoothing_examples() {
        assert_eq!(refine_deterministic(&[A, A, B, A, A], 2), vec![A; 5]);
        assert_eq!(refine_deterministic(&[A, A, B, B, A, A], 2), vec![A, A, B, B, A, A]);
        assert_eq!(refine_deterministic(&[B], 2), vec![B]);
        assert_eq!(refine_deterministic(&[A, B, A], 2), vec![A, A, A]);
        // tie between neighbours of equal length goes to the shallower run
        assert_eq!(refine_deterministic(&[A, A, 2, B, B], 2), vec![A, A, A, B, B]);
        // longer neighbour wins
        assert_eq!(refine_deterministic(&[A, A, 2, B, B, B], 2), vec![A, A, B, B, B, B]);
    }

    #[test]
    fn flying_point_examples() {
        assert_eq!(flying_point_ratio(&[A; 6]), 0.0);
        assert_eq!(flying_point_ratio(&[A, A, B, A, A]), 0.2);
        assert_eq!(flying_point_ratio(&[A, B, A, B]), 1.0);
        assert_eq!(flying_point_ratio(&[B, A, A]), 1.0 / 3.0);
        assert_eq!(flying_point_ratio(&[A]), 0.0);
    }

    fn profile() -> EvidenceProfile {
        build_evidence_profile(
            WindowEvidence {
                well_id: "W".into(),
                start: 0,
                depths: vec![0.0, 1.0, 2.0],
                channel_names: vec!["GR".into()],
                values: vec![vec![1.0]; 3],
                base_probs: vec![ProbabilityVector::new(vec![0.6, 0.4]).unwrap(); 3],
            },
            None,
            None,
            None,
            None,
            ToolFlags::none(),
        )
        .unwrap()
    }

    fn candidate(persona: Persona, labels: Vec<usize>, status: ParseStatus) -> CandidatePrediction {
        CandidatePrediction {
            persona,
            labels,
            rationale: String::new(),
            raw: vec![],
            status,
            backend_error: None,
            dropped_sections: vec![],
            warnings: vec![],
        }
    }

    fn schema() -> LabelSchema {
        LabelSchema::new(["A", "B"]).unwrap()
    }

    #[test]
    fn unanimity_skips_backend() {
        let b = ScriptedBackend::new(["```answer\n0: B\n1: B\n2: B\n```"]);
        let cands: Vec<_> = Persona::ALL
            .iter()
            .map(|&p| candidate(p, vec![A, B, A], ParseStatus::Parsed))
            .collect();
        let r = refine_llm(&b, &profile(), &cands, &schema(), &GeologyGuidelines::default(), &Default::default())
            .unwrap();
        assert_eq!((r.labels, r.method), (vec![A, B, A], RefineMethod::Unanimous));
        assert!(b.calls().is_empty());
    }

    #[test]
    fn backend_block_is_used() {
        let b = ScriptedBackend::new(["fine\n```answer\n0: B\n1: B\n2: B\n```"]);
        let cands = vec![
            candidate(Persona::DataCentricAnalyst, vec![A, A, A], ParseStatus::Parsed),
            candidate(Persona::RuleBasedPhysicist, vec![B, B, B], ParseStatus::Parsed),
        ];
        let r = refine_llm(&b, &profile(), &cands, &schema(), &GeologyGuidelines::default(), &Default::default())
            .unwrap();
        assert_eq!((r.labels, r.method), (vec![B, B, B], RefineMethod::Llm));
        assert_eq!(r.rationale.as_deref(), Some("fine"));
    }

    #[test]
    fn malformed_twice_smooths_plurality() {
        let b = ScriptedBackend::new(["garbage"]);
        let cands = vec![
            candidate(Persona::DataCentricAnalyst, vec![A, B, A], ParseStatus::Parsed),
            candidate(Persona::ContextAwareStratigrapher, vec![A, B, A], ParseStatus::Parsed),
            candidate(Persona::RuleBasedPhysicist, vec![B, B, B], ParseStatus::Parsed),
        ];
        let r = refine_llm(&b, &profile(), &cands, &schema(), &GeologyGuidelines::default(), &Default::default())
            .unwrap();
        assert_eq!(b.calls().len(), 2);
        assert_eq!(r.method, RefineMethod::Deterministic);
        // plurality [A, B, A] smoothed with r = 2
        assert_eq!(r.labels, refine_deterministic(&[A, B, A], 2));
        assert_eq!(r.labels, vec![A, A, A]);
    }

    #[test]
    fn no_readable_candidates_uses_base() {
        let cands = vec![candidate(Persona::DataCentricAnalyst, vec![B, B, B], ParseStatus::Failed)];
        let r = refine_llm(&MockBackend, &profile(), &cands, &schema(), &GeologyGuidelines::default(), &Default::default())
            .unwrap();
        assert_eq!((r.labels, r.method), (vec![A, A, A], RefineMethod::Deterministic));
    }

    #[test]
    fn mock_resolves_by_candidate_plurality() {
        let cands = vec![
            candidate(Persona::DataCentricAnalyst, vec![A, B, B], ParseStatus::Parsed),
            candidate(Persona::ContextAwareStratigrapher, vec![A, B, A], ParseStatus::Parsed),
            candidate(Persona::RuleBasedPhysicist, vec![B, B, B], ParseStatus::Parsed),
        ];
        let r = refine_llm(&MockBackend, &profile(), &cands, &schema(), &GeologyGuidelines::default(), &Default::default())
            .unwrap();
        assert_eq!((r.labels, r.method), (vec![A, B, B], RefineMethod::Llm));
    }

    proptest! {
        #[test]
        fn smoother_invariants(labels in proptest::collection::vec(0usize..4, 1..60), r in 1usize..5) {
            let once = refine_deterministic(&labels, r);
            prop_assert_eq!(once.len(), labels.len());
            prop_assert_eq!(refine_deterministic(&once, r), once.clone());
            prop_assert!(once.iter().all(|l| labels.contains(l)));
            if r == 2 {
                prop_assert_eq!(flying_point_ratio(&once), 0.0);
            }
        }

        #[test]
        fn ratio_ignores_relabelling(labels in proptest::collection::vec(0usize..4, 1..40), shift in 1usize..4) {
            let mapped: Vec<usize> = labels.iter().map(|l| (l + shift) % 4).collect();
            prop_assert_eq!(flying_point_ratio(&labels), flying_point_ratio(&mapped));
        }
    }
}

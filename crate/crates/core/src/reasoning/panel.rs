use serde::{Deserialize, Serialize};

use crate::data::LabelSchema;
use crate::error::Result;
use crate::model::ProbabilityVector;
use crate::tools::EvidenceProfile;

use super::answer::parse_answer;
use super::backend::{ReasonerBackend, SamplingParams};
use super::persona::Persona;
use super::prompt::{render_persona_prompt, Section, FORMAT_REMINDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Parsed,
    /// No run produced a readable answer; labels are the base argmax.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrediction {
    pub persona: Persona,
    pub labels: Vec<usize>,
    pub rationale: String,
    /// Every completion received, retries included, in call order.
    pub raw: Vec<String>,
    pub status: ParseStatus,
    /// Set when the backend itself failed (after its own retries).
    pub backend_error: Option<String>,
    pub dropped_sections: Vec<Section>,
    pub warnings: Vec<String>,
}

impl CandidatePrediction {
    pub fn parsed(&self) -> bool {
        self.status == ParseStatus::Parsed
    }
}

/// Most frequent label per depth across `runs`; ties go to the label with the
/// higher base probability, then the lower class index.
pub fn majority_vote(runs: &[Vec<usize>], base_probs: &[ProbabilityVector]) -> Vec<usize> {
    (0..base_probs.len())
        .map(|i| {
            let k = base_probs[i].len();
            let mut counts = vec![0usize; k];
            for run in runs {
                counts[run[i]] += 1;
            }
            (0..k)
                .max_by(|&a, &b| {
                    counts[a]
                        .cmp(&counts[b])
                        .then(base_probs[i].get(a).total_cmp(&base_probs[i].get(b)))
                        .then(b.cmp(&a))
                })
                .expect("k >= 2")
        })
        .collect()
}

/// Runs one persona `params.votes` times and merges the readable answers.
/// An unreadable reply is retried once with a format reminder.
pub fn infer_persona(
    backend: &dyn ReasonerBackend,
    persona: Persona,
    profile: &EvidenceProfile,
    schema: &LabelSchema,
    params: &SamplingParams,
    budget: Option<usize>,
) -> Result<CandidatePrediction> {
    params.validate()?;
    let prompt = render_persona_prompt(persona, profile, schema, budget);
    let width = profile.width();
    let mut raw = Vec::new();
    let mut runs = Vec::new();
    let mut rationale = None;
    let mut backend_error = None;

    'runs: for run in 0..params.votes {
        let seed = params.seed.wrapping_add(run as u64);
        let mut user = prompt.user.clone();
        for attempt in 0..2 {
            if attempt == 1 {
                user.push_str(FORMAT_REMINDER);
            }
            let text = match backend.complete(&params.request(&prompt.system, &user, seed)) {
                Ok(t) => t,
                Err(e) => {
                    backend_error = Some(e.to_string());
                    break 'runs;
                }
            };
            let parsed = parse_answer(&text, schema, profile.start, width);
            raw.push(text);
            if let Ok(a) = parsed {
                rationale.get_or_insert(a.rationale);
                runs.push(a.labels);
                break;
            }
        }
    }

    let (labels, status) = if runs.is_empty() {
        (profile.base_argmax(), ParseStatus::Failed)
    } else {
        (majority_vote(&runs, &profile.base_probs), ParseStatus::Parsed)
    };
    Ok(CandidatePrediction {
        persona,
        labels,
        rationale: rationale.unwrap_or_default(),
        raw,
        status,
        backend_error,
        dropped_sections: prompt.dropped,
        warnings: prompt.warnings,
    })
}

/// One candidate per persona, in the order given. A failing persona yields a
/// fallback candidate rather than aborting the panel.
pub fn run_panel(
    backend: &dyn ReasonerBackend,
    personas: &[Persona],
    profile: &EvidenceProfile,
    schema: &LabelSchema,
    params: &SamplingParams,
    budget: Option<usize>,
) -> Result<Vec<CandidatePrediction>> {
    personas
        .iter()
        .map(|&p| infer_persona(backend, p, profile, schema, params, budget))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::reasoning::backend::{CompletionRequest, MockBackend, ScriptedBackend};
    use crate::tools::{build_evidence_profile, ToolFlags, WindowEvidence};

    fn schema() -> LabelSchema {
        LabelSchema::new(["A", "B", "C"]).unwrap()
    }

    fn profile() -> EvidenceProfile {
        build_evidence_profile(
            WindowEvidence {
                well_id: "W".into(),
                start: 2,
                depths: vec![1.0, 2.0],
                channel_names: vec!["GR".into()],
                values: vec![vec![1.0], vec![2.0]],
                base_probs: vec![
                    ProbabilityVector::new(vec![0.2, 0.5, 0.3]).unwrap(),
                    ProbabilityVector::new(vec![0.1, 0.3, 0.6]).unwrap(),
                ],
            },
            None,
            None,
            None,
            None,
            ToolFlags::none(),
        )
        .unwrap()
    }

    fn params(votes: usize) -> SamplingParams {
        SamplingParams { votes, ..Default::default() }
    }

    #[test]
    fn fixed_answer_is_returned() {
        let b = ScriptedBackend::new(["```answer\n2: A\n3: A\n```"]);
        let c = infer_persona(&b, Persona::DataCentricAnalyst, &profile(), &schema(), &params(1), None).unwrap();
        assert_eq!((c.labels.clone(), c.status), (vec![0, 0], ParseStatus::Parsed));
    }

    #[test]
    fn majority_across_runs() {
        let b = ScriptedBackend::new([
            "```answer\n2: A\n3: C\n```",
            "```answer\n2: A\n3: C\n```",
            "```answer\n2: B\n3: C\n```",
        ]);
        let c = infer_persona(&b, Persona::DataCentricAnalyst, &profile(), &schema(), &params(3), None).unwrap();
        assert_eq!(c.labels, vec![0, 2]);
        assert_eq!(c.raw.len(), 3);
        let seeds: Vec<u64> = b.calls().iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![17, 18, 19]);
    }

    #[test]
    fn vote_tie_goes_to_base_probability() {
        let probs = profile().base_probs;
        // depth 0: A once, C once, B never; C has the higher base probability
        assert_eq!(majority_vote(&[vec![0, 0], vec![2, 0]], &probs[..1]), vec![2]);
    }

    #[test]
    fn malformed_falls_back_after_one_retry() {
        let b = ScriptedBackend::new(["no block here"]);
        let c = infer_persona(&b, Persona::RuleBasedPhysicist, &profile(), &schema(), &params(1), None).unwrap();
        assert_eq!(c.status, ParseStatus::Failed);
        assert_eq!(c.labels, vec![1, 2]);
        let calls = b.calls();
        assert_eq!(calls.len(), 2);
        assert!(calls[1].user.ends_with(FORMAT_REMINDER));
    }

    #[test]
    fn retry_can_recover() {
        let b = ScriptedBackend::new(["oops", "```answer\n2: C\n3: C\n```"]);
        let c = infer_persona(&b, Persona::RuleBasedPhysicist, &profile(), &schema(), &params(1), None).unwrap();
        assert_eq!((c.labels, c.status), (vec![2, 2], ParseStatus::Parsed));
    }

    #[test]
    fn panel_shapes() {
        let p = profile();
        let out = run_panel(&MockBackend, &Persona::ALL, &p, &schema(), &params(3), None).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.labels == out[0].labels));
        let order: Vec<Persona> = out.iter().map(|c| c.persona).collect();
        assert_eq!(order, Persona::ALL.to_vec());
    }

    #[test]
    fn conflicting_answers_are_kept_apart() {
        let by_persona = |r: &CompletionRequest| -> crate::Result<String> {
            let label = if r.system.contains("quantitative") {
                "A"
            } else if r.system.contains("stratigrapher") {
                "B"
            } else {
                "C"
            };
            Ok(format!("```answer\n2: {label}\n3: {label}\n```"))
        };
        let out = run_panel(&by_persona, &Persona::ALL, &profile(), &schema(), &params(1), None).unwrap();
        let labels: Vec<Vec<usize>> = out.iter().map(|c| c.labels.clone()).collect();
        assert_eq!(labels, vec![vec![0, 0], vec![1, 1], vec![2, 2]]);
    }

    #[test]
    fn backend_failure_does_not_abort_panel() {
        let flaky = |r: &CompletionRequest| -> crate::Result<String> {
            if r.system.contains("petrophysicist") {
                Err(Error::Backend("down".into()))
            } else {
                Ok("```answer\n2: A\n3: A\n```".into())
            }
        };
        let out = run_panel(&flaky, &Persona::ALL, &profile(), &schema(), &params(1), None).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out[0].parsed() && out[1].parsed());
        assert_eq!(out[2].status, ParseStatus::Failed);
        assert!(out[2].backend_error.is_some());
        assert_eq!(out[2].labels, vec![1, 2]);
    }
}

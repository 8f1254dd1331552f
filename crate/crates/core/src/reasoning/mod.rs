//! Persona panel: each persona reads the same evidence profile and proposes
//! labels for every depth of the window.

pub mod answer;
pub mod backend;
pub mod panel;
pub mod persona;
pub mod prompt;

pub use answer::{format_answer, parse_answer, ParsedAnswer};
pub use backend::{
    CompletionRequest, HttpBackend, HttpConfig, MockBackend, ReasonerBackend, SamplingParams, ScriptedBackend,
};
pub use panel::{infer_persona, majority_vote, run_panel, CandidatePrediction, ParseStatus};
pub use persona::Persona;
pub use prompt::{render_persona_prompt, RenderedPrompt, Section};

//! Confidence-routed lithology classification for well logs.
//!
//! A cheap base classifier labels every depth; depths it is unsure about are
//! escalated to a panel of reasoning personas fed with tool-built evidence,
//! and the panel's candidates are reconciled under continuity constraints.

pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reasoning;
pub mod refine;
pub mod router;
pub mod synth;
pub mod tools;

pub use error::{Error, Result};

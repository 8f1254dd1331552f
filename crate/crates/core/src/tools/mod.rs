//! Evidence tools run before reasoning: knowledge lookup, trend analysis,
//! neighbour retrieval and prediction history.

pub mod history;
pub mod kb;
pub mod neighbors;
pub mod profile;
pub mod trend;

pub use history::{gather_history, HistoryWindow};
pub use kb::{kb_lookup, KnowledgeBase, KnowledgeExcerpt};
pub use neighbors::{retrieve_neighbors, Neighbor, NeighborSet, ReferenceSet};
pub use profile::{build_evidence_profile, EvidenceProfile, ToolFlags, WindowEvidence};
pub use trend::{analyze_trend, ols_slope, ChannelTrend, Regime, TrendSummary};

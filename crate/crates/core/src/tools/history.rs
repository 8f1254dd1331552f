use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels already assigned directly above a window, nearest first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub labels: Vec<usize>,
}

/// Collects `predictions[start-1], predictions[start-2], ...` up to `depth`
/// entries. A missing prediction above `start` means the window was scheduled
/// before its predecessors finished.
pub fn gather_history(predictions: &[Option<usize>], start: usize, depth: usize) -> Result<HistoryWindow> {
    if depth == 0 {
        return Err(Error::InvalidArgument("history depth must be positive".into()));
    }
    if start > predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "history start {start} beyond well of length {}",
            predictions.len()
        )));
    }
    let labels = (start.saturating_sub(depth)..start)
        .rev()
        .map(|t| {
            predictions[t].ok_or_else(|| {
                Error::Sequencing(format!("depth {t} has no prediction before window starting at {start}"))
            })
        })
        .collect::<Result<_>>()?;
    Ok(HistoryWindow { labels })
}

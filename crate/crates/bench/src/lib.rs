//! Shared fixtures for the benchmarks.

use xrl::agent::train;
use xrl::{EmpiricalModel, GridLayout, LearningConfig, QTable};

/// Canonical layout with a briefly trained agent and its transition counts.
pub fn canonical_agent(episodes: u32) -> (GridLayout, QTable, EmpiricalModel) {
    let layout = GridLayout::canonical();
    let t = train(&layout, &LearningConfig { episodes, ..Default::default() }).expect("valid config");
    (layout, t.q, t.model)
}

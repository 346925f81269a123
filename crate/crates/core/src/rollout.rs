//! Forward simulation of policies and translation of the resulting
//! trajectories into concept/outcome paths.
//!
//! "Most probable" follows the highest-probability successor at every step.
//! This is a per-step choice: the resulting trajectory is not necessarily the
//! globally most likely one. Use [`ensemble`] for a sampled view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Policy;
use crate::gridworld::{Action, EnvState, GridLayout};
use crate::interpret::{ConceptVec, OutcomePredictor, OutcomeVec, RuleTranslator, StateTranslator};
use crate::transition::TransitionSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    MostProbable,
    Sampled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    HorizonReached,
    Terminated,
    UnknownTransition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrajectoryStep {
    pub state: EnvState,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Visited non-terminal states and the action taken in each; at most
    /// `horizon + 1` entries, indexed from the query state.
    pub steps: Vec<TrajectoryStep>,
    /// Probability of each simulated transition, in order.
    pub transition_probs: Vec<f64>,
    /// State reached after the last simulated transition.
    pub final_state: EnvState,
    pub truncation: Truncation,
}

impl Trajectory {
    /// Product of the transition probabilities.
    pub fn weight(&self) -> f64 {
        self.transition_probs.iter().product()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.steps.iter().map(|s| s.action)
    }
}

/// Simulates `policy` from `start` for up to `horizon` transitions.
pub fn simulate(
    layout: &GridLayout,
    start: &EnvState,
    policy: &dyn Policy,
    horizon: u32,
    source: &dyn TransitionSource,
    mode: RolloutMode,
) -> Trajectory {
    let mut rng = match mode {
        RolloutMode::Sampled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        RolloutMode::MostProbable => None,
    };
    let mut s = *start;
    let mut steps = Vec::new();
    let mut transition_probs = Vec::new();
    let truncation = loop {
        if s.is_terminal() {
            break Truncation::Terminated;
        }
        let action = policy.action(&layout.features(&s));
        steps.push(TrajectoryStep { state: s, action });
        if steps.len() > horizon as usize {
            break Truncation::HorizonReached;
        }
        let Some(dist) = source.transition(&s, action) else {
            break Truncation::UnknownTransition;
        };
        let next = match rng.as_mut() {
            Some(rng) => dist.sample(rng),
            None => dist.most_probable(),
        };
        let Some((next, p)) = next else {
            break Truncation::UnknownTransition;
        };
        transition_probs.push(p);
        s = next;
    };
    Trajectory {
        steps,
        transition_probs,
        final_state: s,
        truncation,
    }
}

/// Independent sampled trajectories, one per seed, in seed order.
pub fn ensemble(
    layout: &GridLayout,
    start: &EnvState,
    policy: &dyn Policy,
    horizon: u32,
    source: &dyn TransitionSource,
    seeds: &[u64],
) -> Vec<Trajectory> {
    seeds
        .iter()
        .map(|&seed| simulate(layout, start, policy, horizon, source, RolloutMode::Sampled(seed)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStep {
    pub action: Action,
    pub concepts: ConceptVec,
    /// `None` when the transition source could not predict this step.
    pub outcomes: Option<OutcomeVec>,
}

/// A trajectory translated step by step into concepts and outcomes.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PathSeq {
    pub steps: Vec<PathStep>,
}

impl PathSeq {
    pub fn is_partial(&self) -> bool {
        self.steps.iter().any(|s| s.outcomes.is_none())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn to_path_with<T: StateTranslator + OutcomePredictor>(
    translator: &T,
    trajectory: &Trajectory,
    source: &dyn TransitionSource,
) -> PathSeq {
    PathSeq {
        steps: trajectory
            .steps
            .iter()
            .map(|step| PathStep {
                action: step.action,
                concepts: translator.concepts(&step.state),
                outcomes: translator.outcomes(&step.state, step.action, source).ok(),
            })
            .collect(),
    }
}

/// Translates with the layout's rule-based translator.
pub fn to_path(layout: &GridLayout, trajectory: &Trajectory, source: &dyn TransitionSource) -> PathSeq {
    to_path_with(&RuleTranslator::new(layout), trajectory, source)
}

/// One exported step of a trajectory, with its translation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub state: EnvState,
    pub action: Action,
    pub concepts: ConceptVec,
    pub outcomes: Option<OutcomeVec>,
    /// Probability of the transition out of this step, when simulated.
    pub transition_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryExport {
    pub truncation: Truncation,
    pub final_state: EnvState,
    pub weight: f64,
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryExport {
    pub fn new(trajectory: &Trajectory, path: &PathSeq) -> Self {
        let records = trajectory
            .steps
            .iter()
            .zip(&path.steps)
            .enumerate()
            .map(|(i, (t, p))| TrajectoryRecord {
                step: i,
                state: t.state,
                action: t.action,
                concepts: p.concepts,
                outcomes: p.outcomes,
                transition_probability: trajectory.transition_probs.get(i).copied(),
            })
            .collect();
        Self {
            truncation: trajectory.truncation,
            final_state: trajectory.final_state,
            weight: trajectory.weight(),
            records,
        }
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

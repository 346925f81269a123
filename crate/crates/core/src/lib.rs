//! Contrastive "why not?" explanations for tabular Q-learning agents on a
//! small grid world.
//!
//! A user asks what would happen if the agent followed an alternative plan
//! (the foil). The foil is turned into a policy by adding locally imposed
//! values to the agent's learned ones, both policies are simulated forward,
//! and the expected situations and outcomes are compared.

pub mod agent;
pub mod explain;
pub mod foil;
pub mod gridworld;
pub mod interpret;
pub mod pipeline;
pub mod rollout;
pub mod transition;

pub use agent::{LearningConfig, Policy, QTable};
pub use explain::{ContrastMode, ContrastSet, PathSummary, Template};
pub use foil::{FoilContext, FoilParams, FoilQuery, ImposedReward};
pub use gridworld::{Action, Coord, EnvState, FeatureVec, GridLayout, Status};
pub use interpret::{Concept, ConceptVec, Outcome, OutcomeVec, Token, Vocabulary};
pub use pipeline::{explain_query, ExplainOptions, ExplanationPayload, TransitionChoice};
pub use rollout::{PathSeq, RolloutMode, Trajectory};
pub use transition::{Distribution, EmpiricalModel, TransitionSource};

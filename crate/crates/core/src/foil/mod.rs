//! Foil policy synthesis.
//!
//! A foil query is turned into a policy in three steps:
//!
//! 1. Simulate short rollouts from the query state. Wherever a query rule is
//!    active, its action earns an imposed reward that compensates for the
//!    learned action's advantage. The reward is scaled by a Gaussian kernel
//!    on the distance from the query state and by the discount ratio.
//! 2. Learn imposed values `q_i` from those rewards with Q-learning.
//! 3. Add them to the learned values: `q_f = q_t + q_i`. The foil policy is
//!    the agent's own greedy selection over `q_f`.
//!
//! Far from the query state the kernel vanishes, so the foil policy falls
//! back to the learned one.

mod query;

pub use query::{
    parse_expr, Condition, Expr, FoilQuery, FoilRule, Position, QueryDocument, QueryError,
    RuleCursor, RuleDocument,
};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{q_update, Policy, QTable};
use crate::gridworld::{Action, EnvState, FeatureVec, GridLayout};
use crate::interpret::describe_state;
use crate::transition::{expected_reward, TransitionSource};

/// What the imposed reward compensates for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImposedReward {
    /// Gap in expected one-step reward, `R(s, a_f) - R(s, a_t)`.
    #[default]
    RewardGap,
    /// Gap in learned value, `Q_t(s, a_t) - Q_t(s, a_f)`. Guarantees the foil
    /// action overtakes the learned one where the kernel weight is near one.
    ValueGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoilParams {
    /// Kernel width in tiles.
    pub sigma: f64,
    /// Margin by which the foil action should be preferred.
    pub epsilon: f64,
    /// Discount used when learning the imposed values.
    pub lambda_f: f64,
    /// Simulation horizon; defaults to `ceil(3 * sigma)`.
    pub horizon: Option<u32>,
    /// Permit a horizon shorter than `ceil(3 * sigma)`.
    pub allow_short_horizon: bool,
    /// Number of simulated rollouts used to learn the imposed values.
    pub rollouts: u32,
    pub alpha: f64,
    pub seed: u64,
    pub imposed_reward: ImposedReward,
}

impl Default for FoilParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            epsilon: 0.1,
            lambda_f: 0.9,
            horizon: None,
            allow_short_horizon: false,
            rollouts: 500,
            alpha: 0.2,
            seed: 0,
            imposed_reward: ImposedReward::RewardGap,
        }
    }
}

impl FoilParams {
    pub fn min_horizon(&self) -> u32 {
        (3.0 * self.sigma).ceil() as u32
    }

    pub fn horizon(&self) -> u32 {
        self.horizon.unwrap_or_else(|| self.min_horizon())
    }

    /// Checks the parameters against the agent's discount `lambda`.
    pub fn validate(&self, lambda: f64) -> Result<(), FoilError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(FoilError::InvalidParams("sigma must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(FoilError::InvalidParams("epsilon must be positive"));
        }
        if !(self.lambda_f > 0.0 && self.lambda_f <= lambda) {
            return Err(FoilError::InvalidParams(
                "lambda_f must lie in (0, lambda]",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FoilError::InvalidParams("alpha must lie in (0, 1]"));
        }
        if self.horizon() == 0 {
            return Err(FoilError::InvalidParams("horizon must be positive"));
        }
        if self.horizon() < self.min_horizon() && !self.allow_short_horizon {
            return Err(FoilError::InvalidParams(
                "horizon below ceil(3 * sigma); set allow_short_horizon to override",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FoilError {
    #[error("invalid foil parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// Gaussian kernel `exp(-(d / sigma)^2)` on a precomputed distance.
pub fn kernel_weight(distance: f64, sigma: f64) -> f64 {
    (-(distance / sigma).powi(2)).exp()
}

/// Kernel weight between two states, using Manhattan distance between the
/// agent positions.
pub fn rbf_weight(s_i: &EnvState, s_t: &EnvState, sigma: f64) -> f64 {
    kernel_weight(f64::from(s_i.agent.manhattan(s_t.agent)), sigma)
}

/// `(lambda_f / lambda) * weight * gap * (1 + epsilon)`.
pub fn scaled_imposed_reward(gap: f64, weight: f64, lambda_f: f64, lambda: f64, epsilon: f64) -> f64 {
    (lambda_f / lambda) * weight * gap * (1.0 + epsilon)
}

/// Everything the foil engine reads but never modifies.
#[derive(Clone, Copy)]
pub struct FoilContext<'a> {
    pub layout: &'a GridLayout,
    pub source: &'a dyn TransitionSource,
    pub q_t: &'a QTable,
    /// Discount factor the learned values were trained with.
    pub lambda: f64,
}

impl FoilContext<'_> {
    /// Imposed reward for taking the foil action `a_f` instead of the learned
    /// action `a_t` in `s_i`, during a simulation that started from `s_t`.
    ///
    /// `None` when the reward gap cannot be evaluated because the transition
    /// source does not know one of the two actions.
    pub fn imposed_reward(
        &self,
        s_i: &EnvState,
        a_f: Action,
        a_t: Action,
        s_t: &EnvState,
        params: &FoilParams,
    ) -> Option<f64> {
        let gap = match params.imposed_reward {
            ImposedReward::RewardGap => {
                expected_reward(self.layout, self.source, s_i, a_f)?
                    - expected_reward(self.layout, self.source, s_i, a_t)?
            }
            ImposedReward::ValueGap => {
                let f = self.layout.features(s_i);
                self.q_t.get(&f, a_t) - self.q_t.get(&f, a_f)
            }
        };
        let w = rbf_weight(s_i, s_t, params.sigma);
        Some(scaled_imposed_reward(
            gap,
            w,
            params.lambda_f,
            self.lambda,
            params.epsilon,
        ))
    }

    /// Learns imposed values by simulated rollouts from `s_t`.
    ///
    /// Each rollout lasts at most the horizon. While a query rule is active
    /// the rollout takes the rule's action and backs up its imposed reward;
    /// otherwise it follows the learned greedy policy without updating.
    pub fn train_imposed(
        &self,
        query: &FoilQuery,
        s_t: &EnvState,
        params: &FoilParams,
    ) -> Result<ImposedValues, FoilError> {
        params.validate(self.lambda)?;
        let n = params.horizon();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut q_i = QTable::new();
        let mut support = BTreeSet::new();
        let mut truncated_rollouts = 0;
        for _ in 0..params.rollouts {
            let mut s = *s_t;
            let mut cursor = RuleCursor::default();
            support.insert(self.layout.features(&s));
            for _ in 0..n {
                if s.is_terminal() {
                    break;
                }
                let f = self.layout.features(&s);
                let (a_f, next_cursor) = query.active_action(&describe_state(self.layout, &s), cursor);
                cursor = next_cursor;
                let a_t = self.q_t.greedy(&f);
                let action = a_f.unwrap_or(a_t);
                let sampled = self
                    .source
                    .transition(&s, action)
                    .and_then(|d| d.sample(&mut rng));
                let Some((next, _)) = sampled else {
                    truncated_rollouts += 1;
                    break;
                };
                if let Some(a_f) = a_f {
                    let Some(r) = self.imposed_reward(&s, a_f, a_t, s_t, params) else {
                        truncated_rollouts += 1;
                        break;
                    };
                    let next_f = (!next.is_terminal()).then(|| self.layout.features(&next));
                    q_update(&mut q_i, f, a_f, r, next_f.as_ref(), params.alpha, params.lambda_f);
                }
                support.insert(self.layout.features(&next));
                s = next;
            }
        }
        Ok(ImposedValues {
            q_i,
            support,
            truncated_rollouts,
        })
    }

    /// Runs the whole synthesis: imposed values, composed values, policy.
    pub fn synthesize(
        &self,
        query: &FoilQuery,
        s_t: &EnvState,
        params: &FoilParams,
    ) -> Result<FoilSynthesis, FoilError> {
        let imposed = self.train_imposed(query, s_t, params)?;
        let q_f = compose_qf(self.q_t, &imposed.q_i);
        Ok(FoilSynthesis { imposed, q_f })
    }
}

#[derive(Debug, Clone)]
pub struct ImposedValues {
    pub q_i: QTable,
    /// Feature keys visited by the simulation.
    pub support: BTreeSet<FeatureVec>,
    /// Rollouts cut short by an unknown transition.
    pub truncated_rollouts: u32,
}

#[derive(Debug, Clone)]
pub struct FoilSynthesis {
    pub imposed: ImposedValues,
    pub q_f: QTable,
}

impl FoilSynthesis {
    pub fn policy(&self) -> impl Policy + '_ {
        foil_policy(&self.q_f)
    }
}

/// Pointwise sum over the union of keys.
pub fn compose_qf(q_t: &QTable, q_i: &QTable) -> QTable {
    let mut q_f = QTable::with_default(q_t.default_value() + q_i.default_value());
    let keys: BTreeSet<(FeatureVec, Action)> = q_t.iter().chain(q_i.iter()).map(|(k, _)| *k).collect();
    for (f, a) in keys {
        q_f.set(f, a, q_t.get(&f, a) + q_i.get(&f, a));
    }
    q_f
}

/// The foil policy is the agent's own greedy selection over the composed values.
pub fn foil_policy(q_f: &QTable) -> impl Policy + '_ {
    move |f: &FeatureVec| q_f.greedy(f)
}

//! Tabular Q-learning over feature vectors, and an exact dynamic-programming
//! solver over full simulator states used as a reference.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{Action, EnvState, FeatureVec, GridLayout};
use crate::transition::{data_lines, expect_header, EmpiricalModel, FormatError};

/// State-action values keyed by feature vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    entries: BTreeMap<(FeatureVec, Action), f64>,
    default_value: f64,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(default_value: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            default_value,
        }
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    pub fn get(&self, f: &FeatureVec, a: Action) -> f64 {
        self.entries
            .get(&(*f, a))
            .copied()
            .unwrap_or(self.default_value)
    }

    /// Stores a value. Non-finite values are rejected.
    pub fn set(&mut self, f: FeatureVec, a: Action, value: f64) {
        assert!(value.is_finite(), "Q-values must be finite, got {value}");
        self.entries.insert((f, a), value);
    }

    pub fn contains(&self, f: &FeatureVec, a: Action) -> bool {
        self.entries.contains_key(&(*f, a))
    }

    pub fn values(&self, f: &FeatureVec) -> [f64; 4] {
        Action::ALL.map(|a| self.get(f, a))
    }

    pub fn max_value(&self, f: &FeatureVec) -> f64 {
        self.values(f).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Argmax over actions; ties resolve to the first action in canonical order.
    pub fn greedy(&self, f: &FeatureVec) -> Action {
        argmax(&self.values(f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(FeatureVec, Action), &f64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feature keys with at least one stored entry.
    pub fn features(&self) -> BTreeSet<FeatureVec> {
        self.entries.keys().map(|(f, _)| *f).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("qtab v1\ndefault {}\n", self.default_value);
        for ((f, a), v) in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                f.x,
                f.y,
                u8::from(f.adj_forest),
                u8::from(f.adj_monster),
                u8::from(f.adj_trap),
                a,
                v
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut lines = data_lines(text);
        expect_header(&mut lines, "qtab v1")?;
        let (no, line) = lines
            .next()
            .ok_or_else(|| FormatError::new(2, "missing default line"))?;
        let default_value = line
            .strip_prefix("default ")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| FormatError::new(no, "expected `default <value>`"))?;
        let mut q = QTable::with_default(default_value);
        for (no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [x, y, af, am, at, a, v] = fields[..] else {
                return Err(FormatError::new(no, "expected 7 fields"));
            };
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(FormatError::new(no, "flags must be 0 or 1")),
            };
            let f = FeatureVec {
                x: x.parse().map_err(|_| FormatError::new(no, "bad x"))?,
                y: y.parse().map_err(|_| FormatError::new(no, "bad y"))?,
                adj_forest: flag(af)?,
                adj_monster: flag(am)?,
                adj_trap: flag(at)?,
            };
            let a = Action::parse(a).ok_or_else(|| FormatError::new(no, "bad action"))?;
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| FormatError::new(no, "bad value"))?;
            q.set(f, a, v);
        }
        Ok(q)
    }
}

fn argmax(values: &[f64; 4]) -> Action {
    let mut best = 0;
    for i in 1..4 {
        if values[i] > values[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// A stationary policy over observations.
pub trait Policy {
    fn action(&self, f: &FeatureVec) -> Action;
}

/// Greedy policy of a Q-table.
impl Policy for QTable {
    fn action(&self, f: &FeatureVec) -> Action {
        self.greedy(f)
    }
}

impl<F: Fn(&FeatureVec) -> Action> Policy for F {
    fn action(&self, f: &FeatureVec) -> Action {
        self(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Greedy,
    /// Uniformly random action with the given probability, greedy otherwise.
    EpsilonGreedy(f64),
}

pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    f: &FeatureVec,
    mode: Selection,
    rng: &mut R,
) -> Action {
    match mode {
        Selection::Greedy => q.greedy(f),
        Selection::EpsilonGreedy(rate) => {
            if rng.gen::<f64>() < rate {
                Action::ALL[rng.gen_range(0..4)]
            } else {
                q.greedy(f)
            }
        }
    }
}

/// One Q-learning backup. `next` is `None` for terminal successors.
pub fn q_update(
    q: &mut QTable,
    f: FeatureVec,
    a: Action,
    reward: f64,
    next: Option<&FeatureVec>,
    alpha: f64,
    lambda: f64,
) {
    let bootstrap = next.map_or(0.0, |n| q.max_value(n));
    let target = reward + lambda * bootstrap;
    let value = (1.0 - alpha) * q.get(&f, a) + alpha * target;
    q.set(f, a, value);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub alpha: f64,
    /// Discount factor.
    pub lambda: f64,
    /// Exploration rate at the first episode.
    pub epsilon_explore: f64,
    /// Exploration rate at the last episode; decays linearly in between.
    pub epsilon_final: f64,
    pub episodes: u32,
    pub max_steps_per_episode: u32,
    pub seed: u64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 0.9,
            epsilon_explore: 0.1,
            epsilon_final: 0.01,
            episodes: 50_000,
            max_steps_per_episode: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid learning config: {0}")]
pub struct ConfigError(pub &'static str);

impl LearningConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ConfigError("alpha must lie in (0, 1]"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ConfigError("lambda must lie in (0, 1)"));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_explore) || !unit.contains(&self.epsilon_final) {
            return Err(ConfigError("exploration rates must lie in [0, 1]"));
        }
        if self.max_steps_per_episode == 0 {
            return Err(ConfigError("max_steps_per_episode must be positive"));
        }
        Ok(())
    }

    fn exploration_at(&self, episode: u32) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_explore;
        }
        let frac = f64::from(episode) / f64::from(self.episodes - 1);
        self.epsilon_explore + (self.epsilon_final - self.epsilon_explore) * frac
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Training {
    pub q: QTable,
    /// Undiscounted return of every episode, in order.
    pub returns: Vec<f64>,
    /// Transition counts gathered while exploring.
    pub model: EmpiricalModel,
}

/// Trains a Q-table with epsilon-greedy tabular Q-learning, recording every
/// experienced transition into an empirical model along the way.
pub fn train(layout: &GridLayout, config: &LearningConfig) -> Result<Training, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = QTable::new();
    let mut model = EmpiricalModel::new(0.0);
    let mut returns = Vec::with_capacity(config.episodes as usize);
    for episode in 0..config.episodes {
        let rate = config.exploration_at(episode);
        let mut state = layout.initial_state();
        let mut total = 0.0;
        for _ in 0..config.max_steps_per_episode {
            let f = layout.features(&state);
            let a = select_action(&q, &f, Selection::EpsilonGreedy(rate), &mut rng);
            let (next, r) = layout.step(&state, a, &mut rng);
            model.record(&state, a, &next);
            total += r;
            let next_f = (!next.is_terminal()).then(|| layout.features(&next));
            q_update(&mut q, f, a, r, next_f.as_ref(), config.alpha, config.lambda);
            state = next;
            if state.is_terminal() {
                break;
            }
        }
        returns.push(total);
    }
    Ok(Training { q, returns, model })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("state space exceeds {cap} states")]
    StateSpaceTooLarge { cap: usize },
    #[error("no convergence after {iterations} sweeps (residual {residual})")]
    NotConverged { iterations: usize, residual: f64 },
}

pub const STATE_CAP: usize = 1_000_000;
const MAX_SWEEPS: usize = 100_000;

/// Clock-free states reachable from `roots` under any action sequence, in
/// canonical order.
pub fn reachable_states(
    layout: &GridLayout,
    roots: impl IntoIterator<Item = EnvState>,
) -> Result<Vec<EnvState>, SolveError> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    for r in roots {
        let r = r.without_clock();
        if seen.insert(r) {
            queue.push_back(r);
        }
    }
    while let Some(s) = queue.pop_front() {
        if s.is_terminal() {
            continue;
        }
        for a in Action::ALL {
            for (next, _) in layout.true_transition(&s, a).iter() {
                let next = next.without_clock();
                if seen.insert(next) {
                    if seen.len() > STATE_CAP {
                        return Err(SolveError::StateSpaceTooLarge { cap: STATE_CAP });
                    }
                    queue.push_back(next);
                }
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// Optimal values and a greedy policy over full (clock-free) states.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub values: BTreeMap<EnvState, f64>,
    pub policy: BTreeMap<EnvState, Action>,
    pub sweeps: usize,
}

impl ValueSolution {
    pub fn value(&self, s: &EnvState) -> Option<f64> {
        self.values.get(&s.without_clock()).copied()
    }

    pub fn action(&self, s: &EnvState) -> Option<Action> {
        self.policy.get(&s.without_clock()).copied()
    }
}

fn backup(
    layout: &GridLayout,
    values: &BTreeMap<EnvState, f64>,
    s: &EnvState,
    a: Action,
    lambda: f64,
) -> f64 {
    layout
        .true_transition(s, a)
        .iter()
        .map(|(next, p)| {
            let v = values.get(&next.without_clock()).copied().unwrap_or(0.0);
            p * (layout.reward(s, next) + lambda * v)
        })
        .sum()
}

/// Action values of `s` under `values`.
pub fn action_values(
    layout: &GridLayout,
    values: &BTreeMap<EnvState, f64>,
    s: &EnvState,
    lambda: f64,
) -> [f64; 4] {
    Action::ALL.map(|a| backup(layout, values, s, a, lambda))
}

/// Value iteration from the layout's start state until the largest Bellman
/// residual drops below `tolerance`. Terminal states have value zero.
pub fn value_iteration(
    layout: &GridLayout,
    lambda: f64,
    tolerance: f64,
) -> Result<ValueSolution, SolveError> {
    let states = reachable_states(layout, [layout.initial_state()])?;
    let mut values: BTreeMap<EnvState, f64> = states.iter().map(|s| (*s, 0.0)).collect();
    let mut sweeps = 0;
    loop {
        let mut residual: f64 = 0.0;
        let mut next = values.clone();
        for s in states.iter().filter(|s| !s.is_terminal()) {
            let best = action_values(layout, &values, s, lambda)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - values[s]).abs());
            next.insert(*s, best);
        }
        values = next;
        sweeps += 1;
        if residual < tolerance {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(SolveError::NotConverged {
                iterations: sweeps,
                residual,
            });
        }
    }
    let policy = states
        .iter()
        .filter(|s| !s.is_terminal())
        .map(|s| {
            let q = action_values(layout, &values, s, lambda);
            // Later actions must win by more than the solver's own noise.
            let mut best = 0;
            for i in 1..4 {
                if q[i] > q[best] + 1e-9 {
                    best = i;
                }
            }
            (*s, Action::ALL[best])
        })
        .collect();
    Ok(ValueSolution {
        values,
        policy,
        sweeps,
    })
}

/// Expected discounted return of following `policy` (on features) from the
/// layout's start state, computed exactly over the reachable full states.
pub fn evaluate_policy(
    layout: &GridLayout,
    policy: &dyn Policy,
    lambda: f64,
    tolerance: f64,
) -> Result<f64, SolveError> {
    let start = layout.initial_state().without_clock();
    // states reachable under the policy only
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        if s.is_terminal() {
            continue;
        }
        let a = policy.action(&layout.features(&s));
        for (next, _) in layout.true_transition(&s, a).iter() {
            if seen.insert(next.without_clock()) {
                if seen.len() > STATE_CAP {
                    return Err(SolveError::StateSpaceTooLarge { cap: STATE_CAP });
                }
                queue.push_back(next.without_clock());
            }
        }
    }
    let mut values: BTreeMap<EnvState, f64> = seen.iter().map(|s| (*s, 0.0)).collect();
    for sweep in 1..=MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        let mut next = values.clone();
        for s in seen.iter().filter(|s| !s.is_terminal()) {
            let a = policy.action(&layout.features(s));
            let v = backup(layout, &values, s, a, lambda);
            residual = residual.max((v - values[s]).abs());
            next.insert(*s, v);
        }
        values = next;
        if residual < tolerance {
            return Ok(values[&start]);
        }
        if sweep == MAX_SWEEPS {
            return Err(SolveError::NotConverged {
                iterations: sweep,
                residual,
            });
        }
    }
    unreachable!()
}

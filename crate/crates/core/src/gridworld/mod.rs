//! Grid world with a pursuing monster, static traps and forests.
//!
//! The agent moves in the four compass directions. Transitions are skewed
//! toward the intended direction (`p_intent`) with the remaining mass split
//! evenly over the two perpendicular directions. Bumping into a wall leaves
//! the agent in place.
//!
//! One environment step resolves in a fixed order:
//!
//! 1. the agent moves (possibly slipping);
//! 2. reaching the goal or a trap ends the episode immediately;
//! 3. otherwise, if the agent now stands inside the zone, the monster takes
//!    one step toward it (closing the horizontal gap first);
//! 4. a monster at Manhattan distance <= 1 catches the agent.

mod file;

pub use file::LayoutParseError;

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::interpret::Vocabulary;
use crate::transition::Distribution;

/// Tile coordinate; `(0, 0)` is the bottom-left corner.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Coord) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn offset(self, action: Action) -> Coord {
        let (dx, dy) = action.delta();
        Coord::new(self.x + dx, self.y + dy)
    }

    /// Orthogonal neighbours in canonical action order.
    pub fn neighbours(self) -> [Coord; 4] {
        Action::ALL.map(|a| self.offset(a))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Inclusive rectangle of tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub min: Coord,
    pub max: Coord,
}

impl Rect {
    pub fn new(x1: i32, y1: i32, x2: i32, y2: i32) -> Self {
        Self {
            min: Coord::new(x1.min(x2), y1.min(y2)),
            max: Coord::new(x1.max(x2), y1.max(y2)),
        }
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x >= self.min.x && c.x <= self.max.x && c.y >= self.min.y && c.y <= self.max.y
    }
}

/// The four movement actions. The declaration order is the canonical
/// tie-breaking order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    /// The two slip directions, in canonical order.
    pub fn perpendicular(self) -> [Action; 2] {
        match self {
            Action::Up | Action::Down => [Action::Left, Action::Right],
            Action::Left | Action::Right => [Action::Up, Action::Down],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "Up",
            Action::Down => "Down",
            Action::Left => "Left",
            Action::Right => "Right",
        }
    }

    /// Case-insensitive name lookup.
    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Status {
    Running,
    AtGoal,
    InTrap,
    CaughtByMonster,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Running => "Running",
            Status::AtGoal => "AtGoal",
            Status::InTrap => "InTrap",
            Status::CaughtByMonster => "CaughtByMonster",
        }
    }

    pub fn parse(s: &str) -> Option<Status> {
        [
            Status::Running,
            Status::AtGoal,
            Status::InTrap,
            Status::CaughtByMonster,
        ]
        .into_iter()
        .find(|st| st.name() == s)
    }
}

/// Full simulator state.
///
/// The derived ordering (agent, monster, status, step count) is the canonical
/// state order used to break ties between equally likely successors.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct EnvState {
    pub agent: Coord,
    pub monster: Option<Coord>,
    pub status: Status,
    pub step_count: u32,
}

impl EnvState {
    pub fn is_terminal(&self) -> bool {
        self.status.is_terminal()
    }

    /// The same state with the step counter reset. Dynamics do not depend on
    /// the counter, so this is the key used by tabular models and solvers.
    pub fn without_clock(&self) -> EnvState {
        EnvState {
            step_count: 0,
            ..*self
        }
    }
}

impl fmt::Display for EnvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent {}", self.agent)?;
        if let Some(m) = self.monster {
            write!(f, ", monster {m}")?;
        }
        write!(f, ", {}", self.status.name())
    }
}

/// The agent's observation: coordinates plus adjacent-hazard flags.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct FeatureVec {
    pub x: i32,
    pub y: i32,
    pub adj_forest: bool,
    pub adj_monster: bool,
    pub adj_trap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub step_penalty: f64,
    /// Charged on top of the step penalty when the agent ends up in a forest.
    pub forest_penalty: f64,
    pub terminal_penalty: f64,
    pub goal_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step_penalty: -1.0,
            forest_penalty: -5.0,
            terminal_penalty: -50.0,
            goal_reward: 50.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let all_finite = [
            self.step_penalty,
            self.forest_penalty,
            self.terminal_penalty,
            self.goal_reward,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(LayoutError::Invalid("reward values must be finite"));
        }
        if self.step_penalty >= 0.0 {
            return Err(LayoutError::Invalid("step_penalty must be negative"));
        }
        if self.forest_penalty >= self.step_penalty {
            return Err(LayoutError::Invalid(
                "forest_penalty must be below step_penalty",
            ));
        }
        if self.terminal_penalty >= self.forest_penalty {
            return Err(LayoutError::Invalid(
                "terminal_penalty must be below forest_penalty",
            ));
        }
        if self.goal_reward <= 0.0 {
            return Err(LayoutError::Invalid("goal_reward must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LayoutError {
    #[error(transparent)]
    Parse(#[from] LayoutParseError),
    #[error("invalid layout: {0}")]
    Invalid(&'static str),
}

/// A validated grid layout together with its dynamics parameters and the
/// vocabulary used to describe it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub width: i32,
    pub height: i32,
    pub start: Coord,
    pub goal: Coord,
    pub forests: BTreeSet<Coord>,
    pub traps: BTreeSet<Coord>,
    pub monster_start: Option<Coord>,
    pub zone: Rect,
    pub p_intent: f64,
    pub rewards: RewardConfig,
    pub vocabulary: Vocabulary,
}

/// The canonical 10x10 layout shipped with the crate.
pub const CANONICAL_LAYOUT: &str = include_str!("../../data/canonical.grid");

impl GridLayout {
    /// An open world with no hazards. Handy for building micro-worlds.
    pub fn open(width: i32, height: i32, start: Coord, goal: Coord) -> Self {
        Self {
            width,
            height,
            start,
            goal,
            forests: BTreeSet::new(),
            traps: BTreeSet::new(),
            monster_start: None,
            zone: Rect::new(0, 0, width - 1, height - 1),
            p_intent: 0.8,
            rewards: RewardConfig::default(),
            vocabulary: Vocabulary::default(),
        }
    }

    pub fn canonical() -> Self {
        Self::parse(CANONICAL_LAYOUT).expect("shipped layout is valid")
    }

    pub fn parse(text: &str) -> Result<Self, LayoutError> {
        let layout = file::parse(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn to_grid_text(&self) -> String {
        file::render(self)
    }

    pub fn with_p_intent(mut self, p: f64) -> Self {
        self.p_intent = p;
        self
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.width <= 0 || self.height <= 0 {
            return Err(LayoutError::Invalid("width and height must be positive"));
        }
        if !self.in_bounds(self.start) {
            return Err(LayoutError::Invalid("start outside bounds"));
        }
        if !self.in_bounds(self.goal) {
            return Err(LayoutError::Invalid("goal outside bounds"));
        }
        if self.start == self.goal {
            return Err(LayoutError::Invalid("start equals goal"));
        }
        if self.traps.contains(&self.goal) {
            return Err(LayoutError::Invalid("goal on a trap"));
        }
        if self.traps.iter().any(|t| !self.zone.contains(*t)) {
            return Err(LayoutError::Invalid("trap outside zone"));
        }
        if self.traps.iter().chain(&self.forests).any(|c| !self.in_bounds(*c)) {
            return Err(LayoutError::Invalid("hazard outside bounds"));
        }
        if let Some(m) = self.monster_start {
            if !self.zone.contains(m) || !self.in_bounds(m) {
                return Err(LayoutError::Invalid("monster outside zone"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_intent) {
            return Err(LayoutError::Invalid("p_intent must lie in [0, 1]"));
        }
        self.rewards.validate()
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn initial_state(&self) -> EnvState {
        self.state_at(self.start)
    }

    /// A running state with the agent at `agent` and the monster at its
    /// starting tile.
    pub fn state_at(&self, agent: Coord) -> EnvState {
        EnvState {
            agent,
            monster: self.monster_start,
            status: Status::Running,
            step_count: 0,
        }
    }

    /// All tiles, row-major from the bottom-left.
    pub fn tiles(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Coord::new(x, y)))
    }

    fn moved(&self, from: Coord, action: Action) -> Coord {
        let to = from.offset(action);
        if self.in_bounds(to) {
            to
        } else {
            from
        }
    }

    fn monster_step(&self, monster: Coord, agent: Coord) -> Coord {
        let dx = agent.x - monster.x;
        let dy = agent.y - monster.y;
        let candidates = [
            (dx != 0).then(|| Coord::new(monster.x + dx.signum(), monster.y)),
            (dy != 0).then(|| Coord::new(monster.x, monster.y + dy.signum())),
        ];
        candidates
            .into_iter()
            .flatten()
            .find(|c| self.zone.contains(*c))
            .unwrap_or(monster)
    }

    /// Deterministic successor once the agent's realized move is known.
    pub fn resolve(&self, state: &EnvState, realized: Action) -> EnvState {
        if state.is_terminal() {
            return *state;
        }
        let agent = self.moved(state.agent, realized);
        let mut next = EnvState {
            agent,
            monster: state.monster,
            status: Status::Running,
            step_count: state.step_count + 1,
        };
        if agent == self.goal {
            next.status = Status::AtGoal;
            return next;
        }
        if self.traps.contains(&agent) {
            next.status = Status::InTrap;
            return next;
        }
        if let Some(m) = state.monster {
            let m = if self.zone.contains(agent) {
                self.monster_step(m, agent)
            } else {
                m
            };
            next.monster = Some(m);
            if m.manhattan(agent) <= 1 {
                next.status = Status::CaughtByMonster;
            }
        }
        next
    }

    /// Reward for the transition `prev -> next`; zero out of absorbing states.
    pub fn reward(&self, prev: &EnvState, next: &EnvState) -> f64 {
        if prev.is_terminal() {
            return 0.0;
        }
        let r = &self.rewards;
        let mut total = r.step_penalty;
        if self.forests.contains(&next.agent) {
            total += r.forest_penalty;
        }
        match next.status {
            Status::InTrap | Status::CaughtByMonster => total += r.terminal_penalty,
            Status::AtGoal => total += r.goal_reward,
            Status::Running => {}
        }
        total
    }

    /// Samples one environment step.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        action: Action,
        rng: &mut R,
    ) -> (EnvState, f64) {
        if state.is_terminal() {
            return (*state, 0.0);
        }
        let u: f64 = rng.gen();
        let slip = (1.0 - self.p_intent) / 2.0;
        let [p1, p2] = action.perpendicular();
        let realized = if u < self.p_intent {
            action
        } else if u < self.p_intent + slip {
            p1
        } else {
            p2
        };
        let next = self.resolve(state, realized);
        (next, self.reward(state, &next))
    }

    /// Exact successor distribution of `step`. Branches that land on the same
    /// successor are merged; zero-probability branches are dropped.
    pub fn true_transition(&self, state: &EnvState, action: Action) -> Distribution {
        if state.is_terminal() {
            return Distribution::point(*state);
        }
        let slip = (1.0 - self.p_intent) / 2.0;
        let [p1, p2] = action.perpendicular();
        Distribution::from_weighted(
            [(action, self.p_intent), (p1, slip), (p2, slip)]
                .into_iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(a, p)| (self.resolve(state, a), p)),
        )
    }

    pub fn features(&self, state: &EnvState) -> FeatureVec {
        let around = state.agent.neighbours();
        FeatureVec {
            x: state.agent.x,
            y: state.agent.y,
            adj_forest: around.iter().any(|c| self.forests.contains(c)),
            adj_monster: state
                .monster
                .is_some_and(|m| m.manhattan(state.agent) == 1),
            adj_trap: around.iter().any(|c| self.traps.contains(c)),
        }
    }
}

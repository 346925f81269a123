//! Translation of simulator states into user-interpretable vocabulary.
//!
//! `describe_state` maps a state to boolean situation concepts, and
//! `predict_outcomes` maps a (state, action) pair to the probability of each
//! named outcome one step ahead. Both are exact rule evaluators; the
//! [`StateTranslator`] and [`OutcomePredictor`] traits let trained
//! classifiers stand in for them.

use std::fmt;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::gridworld::{Action, Coord, EnvState, GridLayout, Status};
use crate::transition::TransitionSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Concept {
    NextToForest,
    NextToWall,
    NextToTrap,
    NextToMonster,
    InForest,
}

impl Concept {
    pub const ALL: [Concept; 5] = [
        Concept::NextToForest,
        Concept::NextToWall,
        Concept::NextToTrap,
        Concept::NextToMonster,
        Concept::InForest,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Concept::NextToForest => "next_to_forest",
            Concept::NextToWall => "next_to_wall",
            Concept::NextToTrap => "next_to_trap",
            Concept::NextToMonster => "next_to_monster",
            Concept::InForest => "in_forest",
        }
    }

    pub fn parse(s: &str) -> Option<Concept> {
        Concept::ALL.into_iter().find(|c| c.id() == s)
    }

    fn default_phrase(self) -> &'static str {
        match self {
            Concept::NextToForest => "next to a forest",
            Concept::NextToWall => "next to a wall",
            Concept::NextToTrap => "next to a trap",
            Concept::NextToMonster => "next to the monster",
            Concept::InForest => "in the forest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    AtGoal,
    InTrap,
    NextToMonster,
    InForest,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::AtGoal,
        Outcome::InTrap,
        Outcome::NextToMonster,
        Outcome::InForest,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Outcome::AtGoal => "AtGoal",
            Outcome::InTrap => "InTrap",
            Outcome::NextToMonster => "NextToMonster",
            Outcome::InForest => "InForest",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        Outcome::ALL.into_iter().find(|o| o.id() == s)
    }

    fn index(self) -> usize {
        self as usize
    }

    fn default_phrase(self) -> &'static str {
        match self {
            Outcome::AtGoal => "at the goal",
            Outcome::InTrap => "in a trap",
            Outcome::NextToMonster => "next to the monster",
            Outcome::InForest => "in the forest",
        }
    }

    fn default_valence(self) -> Valence {
        match self {
            Outcome::AtGoal => Valence::Positive,
            _ => Valence::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    Positive,
    Negative,
}

/// A concept or outcome name; the unit of contrastive set operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Concept(Concept),
    Outcome(Outcome),
}

impl Token {
    pub fn id(self) -> &'static str {
        match self {
            Token::Concept(c) => c.id(),
            Token::Outcome(o) => o.id(),
        }
    }

    pub fn parse(s: &str) -> Option<Token> {
        Concept::parse(s)
            .map(Token::Concept)
            .or_else(|| Outcome::parse(s).map(Token::Outcome))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Token::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown token {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ConceptVec {
    pub next_to_forest: bool,
    pub next_to_wall: bool,
    pub next_to_trap: bool,
    pub next_to_monster: bool,
    pub in_forest: bool,
}

impl ConceptVec {
    pub fn get(&self, c: Concept) -> bool {
        match c {
            Concept::NextToForest => self.next_to_forest,
            Concept::NextToWall => self.next_to_wall,
            Concept::NextToTrap => self.next_to_trap,
            Concept::NextToMonster => self.next_to_monster,
            Concept::InForest => self.in_forest,
        }
    }

    pub fn set(&mut self, c: Concept, value: bool) {
        let slot = match c {
            Concept::NextToForest => &mut self.next_to_forest,
            Concept::NextToWall => &mut self.next_to_wall,
            Concept::NextToTrap => &mut self.next_to_trap,
            Concept::NextToMonster => &mut self.next_to_monster,
            Concept::InForest => &mut self.in_forest,
        };
        *slot = value;
    }

    pub fn active(&self) -> impl Iterator<Item = Concept> + '_ {
        Concept::ALL.into_iter().filter(|c| self.get(*c))
    }
}

impl Serialize for ConceptVec {
    /// Serialized as the list of active concept ids.
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.active().map(Concept::id))
    }
}

/// Per-outcome probabilities. Outcomes are not mutually exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutcomeVec([f64; 4]);

impl OutcomeVec {
    pub fn get(&self, o: Outcome) -> f64 {
        self.0[o.index()]
    }

    pub fn set(&mut self, o: Outcome, p: f64) {
        self.0[o.index()] = p;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Outcome, f64)> + '_ {
        Outcome::ALL.into_iter().map(|o| (o, self.get(o)))
    }
}

impl Serialize for OutcomeVec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(4))?;
        for (o, p) in self.iter() {
            map.serialize_entry(o.id(), &p)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeEntry {
    pub outcome: Outcome,
    pub phrase: String,
    pub valence: Valence,
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl Serialize for Concept {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

/// Ordered display phrases for concepts and outcomes, plus outcome valence.
///
/// Rendered explanations list items in vocabulary order and use the phrases
/// verbatim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vocabulary {
    pub concepts: Vec<(Concept, String)>,
    pub outcomes: Vec<OutcomeEntry>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            concepts: Concept::ALL
                .into_iter()
                .map(|c| (c, c.default_phrase().to_string()))
                .collect(),
            outcomes: Outcome::ALL
                .into_iter()
                .map(|o| OutcomeEntry {
                    outcome: o,
                    phrase: o.default_phrase().to_string(),
                    valence: o.default_valence(),
                })
                .collect(),
        }
    }
}

impl Vocabulary {
    pub fn phrase(&self, token: Token) -> Option<&str> {
        match token {
            Token::Concept(c) => self
                .concepts
                .iter()
                .find(|(k, _)| *k == c)
                .map(|(_, p)| p.as_str()),
            Token::Outcome(o) => self
                .outcomes
                .iter()
                .find(|e| e.outcome == o)
                .map(|e| e.phrase.as_str()),
        }
    }

    pub fn valence(&self, o: Outcome) -> Option<Valence> {
        self.outcomes
            .iter()
            .find(|e| e.outcome == o)
            .map(|e| e.valence)
    }

    /// Position of a token in display order; concepts precede outcomes.
    pub fn position(&self, token: Token) -> Option<usize> {
        match token {
            Token::Concept(c) => self.concepts.iter().position(|(k, _)| *k == c),
            Token::Outcome(o) => self
                .outcomes
                .iter()
                .position(|e| e.outcome == o)
                .map(|i| i + self.concepts.len()),
        }
    }

    /// Every concept and outcome appears exactly once.
    pub fn is_complete(&self) -> bool {
        let concepts_ok = Concept::ALL
            .iter()
            .all(|c| self.concepts.iter().filter(|(k, _)| k == c).count() == 1);
        let outcomes_ok = Outcome::ALL
            .iter()
            .all(|o| self.outcomes.iter().filter(|e| e.outcome == *o).count() == 1);
        concepts_ok && outcomes_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranslateError {
    #[error("outcome unavailable: no transition model for {action} at {state}")]
    OutcomeUnavailable { state: String, action: Action },
}

/// State concept classifier (`k`).
pub trait StateTranslator {
    fn concepts(&self, state: &EnvState) -> ConceptVec;
}

/// Action outcome predictor (`t`).
pub trait OutcomePredictor {
    fn outcomes(
        &self,
        state: &EnvState,
        action: Action,
        source: &dyn TransitionSource,
    ) -> Result<OutcomeVec, TranslateError>;
}

/// Exact rule-based translator over a layout.
#[derive(Debug, Clone, Copy)]
pub struct RuleTranslator<'a> {
    pub layout: &'a GridLayout,
}

impl<'a> RuleTranslator<'a> {
    pub fn new(layout: &'a GridLayout) -> Self {
        Self { layout }
    }
}

impl StateTranslator for RuleTranslator<'_> {
    fn concepts(&self, state: &EnvState) -> ConceptVec {
        describe_state(self.layout, state)
    }
}

impl OutcomePredictor for RuleTranslator<'_> {
    fn outcomes(
        &self,
        state: &EnvState,
        action: Action,
        source: &dyn TransitionSource,
    ) -> Result<OutcomeVec, TranslateError> {
        predict_outcomes(self.layout, state, action, source)
    }
}

// Monster on an orthogonal neighbour, or on the agent's own tile (which only
// happens once the agent has been caught).
fn monster_adjacent(monster: Option<Coord>, agent: Coord) -> bool {
    monster.is_some_and(|m| m.manhattan(agent) <= 1)
}

/// Situation concepts holding in `state`.
pub fn describe_state(layout: &GridLayout, state: &EnvState) -> ConceptVec {
    let around = state.agent.neighbours();
    ConceptVec {
        next_to_forest: around.iter().any(|c| layout.forests.contains(c)),
        next_to_wall: around.iter().any(|c| !layout.in_bounds(*c)),
        next_to_trap: around.iter().any(|c| layout.traps.contains(c)),
        next_to_monster: monster_adjacent(state.monster, state.agent),
        in_forest: layout.forests.contains(&state.agent),
    }
}

/// Outcome predicates evaluated on a successor state.
pub fn outcomes_in(layout: &GridLayout, next: &EnvState) -> [bool; 4] {
    [
        next.status == Status::AtGoal,
        next.status == Status::InTrap,
        monster_adjacent(next.monster, next.agent),
        layout.forests.contains(&next.agent),
    ]
}

/// One-step lookahead probability of each outcome after taking `action`.
pub fn predict_outcomes(
    layout: &GridLayout,
    state: &EnvState,
    action: Action,
    source: &dyn TransitionSource,
) -> Result<OutcomeVec, TranslateError> {
    let dist = source
        .transition(state, action)
        .ok_or_else(|| TranslateError::OutcomeUnavailable {
            state: state.to_string(),
            action,
        })?;
    let mut out = OutcomeVec::default();
    for (next, p) in dist.iter() {
        for (o, holds) in Outcome::ALL.into_iter().zip(outcomes_in(layout, next)) {
            if holds {
                out.set(o, out.get(o) + p);
            }
        }
    }
    Ok(out)
}

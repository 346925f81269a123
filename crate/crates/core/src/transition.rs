//! Transition distributions and the sources that produce them.
//!
//! A [`TransitionSource`] answers "where can I end up after taking `a` in
//! `s`?". The layout itself is the exact source; [`EmpiricalModel`] is a
//! count-based estimate learned from experience, which says so explicitly
//! (`None`) when it has never seen a pair.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::gridworld::{Action, Coord, EnvState, GridLayout, Status};

/// Finite categorical distribution over successor states.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    outcomes: Vec<(EnvState, f64)>,
}

impl Distribution {
    pub fn point(state: EnvState) -> Self {
        Self {
            outcomes: vec![(state, 1.0)],
        }
    }

    /// Builds a distribution from weighted successors, merging duplicates in
    /// first-seen order. Weights are taken as probabilities as given.
    pub fn from_weighted(items: impl IntoIterator<Item = (EnvState, f64)>) -> Self {
        let mut outcomes: Vec<(EnvState, f64)> = Vec::new();
        for (s, p) in items {
            match outcomes.iter_mut().find(|(t, _)| *t == s) {
                Some(slot) => slot.1 += p,
                None => outcomes.push((s, p)),
            }
        }
        Self { outcomes }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(EnvState, f64)> {
        self.outcomes.iter()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.outcomes.iter().map(|(_, p)| p).sum()
    }

    pub fn probability(&self, state: &EnvState) -> f64 {
        self.outcomes
            .iter()
            .filter(|(s, _)| s == state)
            .map(|(_, p)| p)
            .sum()
    }

    /// Highest-probability successor; ties go to the smallest state in
    /// canonical order.
    pub fn most_probable(&self) -> Option<(EnvState, f64)> {
        self.outcomes.iter().copied().reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(EnvState, f64)> {
        let u: f64 = rng.gen::<f64>() * self.total();
        let mut acc = 0.0;
        for &(s, p) in &self.outcomes {
            acc += p;
            if u < acc {
                return Some((s, p));
            }
        }
        self.outcomes.last().copied()
    }

    /// Total-variation distance, comparing states without their step clocks.
    pub fn total_variation(&self, other: &Distribution) -> f64 {
        let mut diff: BTreeMap<EnvState, f64> = BTreeMap::new();
        for (s, p) in &self.outcomes {
            *diff.entry(s.without_clock()).or_default() += p;
        }
        for (s, p) in &other.outcomes {
            *diff.entry(s.without_clock()).or_default() -= p;
        }
        0.5 * diff.values().map(|d| d.abs()).sum::<f64>()
    }
}

pub trait TransitionSource {
    /// Successor distribution, or `None` when the source cannot predict it.
    fn transition(&self, state: &EnvState, action: Action) -> Option<Distribution>;
}

impl TransitionSource for GridLayout {
    fn transition(&self, state: &EnvState, action: Action) -> Option<Distribution> {
        Some(self.true_transition(state, action))
    }
}

impl<T: TransitionSource + ?Sized> TransitionSource for &T {
    fn transition(&self, state: &EnvState, action: Action) -> Option<Distribution> {
        (**self).transition(state, action)
    }
}

/// Consults `primary` first and `fallback` for pairs `primary` does not know.
pub struct WithFallback<'a> {
    pub primary: &'a dyn TransitionSource,
    pub fallback: &'a dyn TransitionSource,
}

impl TransitionSource for WithFallback<'_> {
    fn transition(&self, state: &EnvState, action: Action) -> Option<Distribution> {
        self.primary
            .transition(state, action)
            .or_else(|| self.fallback.transition(state, action))
    }
}

/// Expected one-step reward of `action` in `state` under `source`.
pub fn expected_reward(
    layout: &GridLayout,
    source: &dyn TransitionSource,
    state: &EnvState,
    action: Action,
) -> Option<f64> {
    let dist = source.transition(state, action)?;
    Some(
        dist.iter()
            .map(|(next, p)| p * layout.reward(state, next))
            .sum(),
    )
}

/// Tabular count model of the transition function.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalModel {
    counts: BTreeMap<(EnvState, Action), BTreeMap<EnvState, u64>>,
    /// Additive pseudo-count applied to observed successors only.
    pub smoothing: f64,
}

impl EmpiricalModel {
    pub fn new(smoothing: f64) -> Self {
        Self {
            counts: BTreeMap::new(),
            smoothing,
        }
    }

    pub fn record(&mut self, state: &EnvState, action: Action, next: &EnvState) {
        self.add(state, action, next, 1);
    }

    fn add(&mut self, state: &EnvState, action: Action, next: &EnvState, n: u64) {
        *self
            .counts
            .entry((state.without_clock(), action))
            .or_default()
            .entry(next.without_clock())
            .or_default() += n;
    }

    pub fn count(&self, state: &EnvState, action: Action, next: &EnvState) -> u64 {
        self.counts
            .get(&(state.without_clock(), action))
            .and_then(|m| m.get(&next.without_clock()))
            .copied()
            .unwrap_or(0)
    }

    /// Number of distinct (state, action) pairs observed.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn predict(&self, state: &EnvState, action: Action) -> Option<Distribution> {
        let successors = self.counts.get(&(state.without_clock(), action))?;
        let total: f64 = successors
            .values()
            .map(|&c| c as f64 + self.smoothing)
            .sum();
        if total <= 0.0 {
            return None;
        }
        let clock = state.step_count + u32::from(!state.is_terminal());
        Some(Distribution::from_weighted(successors.iter().map(
            |(next, &c)| {
                let next = EnvState {
                    step_count: clock,
                    ..*next
                };
                (next, (c as f64 + self.smoothing) / total)
            },
        )))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tmodel v1\nsmoothing {}\n", self.smoothing);
        for ((s, a), succ) in &self.counts {
            for (next, c) in succ {
                let _ = writeln!(out, "{} {} {} {}", encode_state(s), a, encode_state(next), c);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FormatError> {
        let mut lines = data_lines(text);
        expect_header(&mut lines, "tmodel v1")?;
        let (no, line) = lines.next().ok_or(FormatError::new(2, "missing smoothing line"))?;
        let smoothing = line
            .strip_prefix("smoothing ")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| FormatError::new(no, "expected `smoothing <value>`"))?;
        let mut model = EmpiricalModel::new(smoothing);
        for (no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [s, a, next, c] = fields[..] else {
                return Err(FormatError::new(no, "expected 4 fields"));
            };
            let s = decode_state(s).ok_or_else(|| FormatError::new(no, "bad state"))?;
            let a = Action::parse(a).ok_or_else(|| FormatError::new(no, "bad action"))?;
            let next = decode_state(next).ok_or_else(|| FormatError::new(no, "bad successor"))?;
            let c: u64 = c.parse().map_err(|_| FormatError::new(no, "bad count"))?;
            model.add(&s, a, &next, c);
        }
        Ok(model)
    }
}

impl TransitionSource for EmpiricalModel {
    fn transition(&self, state: &EnvState, action: Action) -> Option<Distribution> {
        self.predict(state, action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl FormatError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn expect_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    header: &str,
) -> Result<(), FormatError> {
    match lines.next() {
        Some((_, l)) if l == header => Ok(()),
        Some((no, l)) => Err(FormatError::new(no, format!("expected {header:?}, found {l:?}"))),
        None => Err(FormatError::new(1, format!("expected {header:?}"))),
    }
}

/// Compact state encoding `ax,ay;mx,my;Status` (monster `-` when absent).
pub fn encode_state(s: &EnvState) -> String {
    let monster = match s.monster {
        Some(m) => format!("{},{}", m.x, m.y),
        None => "-".to_string(),
    };
    format!("{},{};{};{}", s.agent.x, s.agent.y, monster, s.status.name())
}

pub fn decode_state(text: &str) -> Option<EnvState> {
    fn coord(t: &str) -> Option<Coord> {
        let (x, y) = t.split_once(',')?;
        Some(Coord::new(x.parse().ok()?, y.parse().ok()?))
    }
    let mut parts = text.split(';');
    let agent = coord(parts.next()?)?;
    let monster = match parts.next()? {
        "-" => None,
        m => Some(coord(m)?),
    };
    let status = Status::parse(parts.next()?)?;
    if parts.next().is_some() {
        return None;
    }
    Some(EnvState {
        agent,
        monster,
        status,
        step_count: 0,
    })
}

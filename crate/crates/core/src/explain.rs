//! Turning paths into explanations.
//!
//! Contrasts treat each path as a deduplicated set of tokens: every concept
//! active at some step, plus every outcome whose probability reaches the
//! threshold at some step. Rendering is deterministic: fixed clause order and
//! vocabulary order for listed items.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::gridworld::Action;
use crate::interpret::{Concept, Outcome, Token, Valence, Vocabulary};
use crate::rollout::PathSeq;

pub const DEFAULT_THRESHOLD: f64 = 0.3;

pub const EMPTY_CONTRAST: &str = "Both choices lead to the same expected situations and outcomes.";

const NOTHING: &str = "nothing notable";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error("cannot summarize an empty path")]
    EmptyPath,
    #[error("outcome threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("token {0} is not in the vocabulary")]
    UnknownToken(Token),
    #[error("template {template:?} cannot render this input")]
    TemplateMismatch { template: Template },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub dominant_action: Action,
    pub dominant_frequency: f64,
    /// Concepts active at the steps where each action was taken.
    pub per_action_concepts: BTreeMap<Action, BTreeSet<Concept>>,
    /// Outcomes above the threshold with their largest step probability.
    pub positive_outcomes: Vec<(Outcome, f64)>,
    pub negative_outcomes: Vec<(Outcome, f64)>,
    pub horizon: usize,
}

fn check_threshold(threshold: f64) -> Result<(), ExplainError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(ExplainError::BadThreshold(threshold))
    }
}

/// Largest probability each outcome reaches along the path.
fn outcome_peaks(path: &PathSeq) -> BTreeMap<Outcome, f64> {
    let mut peaks = BTreeMap::new();
    for o in path.steps.iter().filter_map(|s| s.outcomes.as_ref()) {
        for (k, p) in o.iter() {
            let e = peaks.entry(k).or_insert(0.0);
            if p > *e {
                *e = p;
            }
        }
    }
    peaks
}

pub fn summarize(path: &PathSeq, threshold: f64, vocab: &Vocabulary) -> Result<PathSummary, ExplainError> {
    check_threshold(threshold)?;
    if path.is_empty() {
        return Err(ExplainError::EmptyPath);
    }
    let mut counts = [0usize; 4];
    let mut per_action_concepts: BTreeMap<Action, BTreeSet<Concept>> = BTreeMap::new();
    for step in &path.steps {
        counts[step.action.index()] += 1;
        per_action_concepts
            .entry(step.action)
            .or_default()
            .extend(step.concepts.active());
    }
    let mut best = 0;
    for i in 1..4 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    let mut positive_outcomes = Vec::new();
    let mut negative_outcomes = Vec::new();
    for (o, p) in outcome_peaks(path) {
        if p < threshold {
            continue;
        }
        match vocab.valence(o) {
            Some(Valence::Positive) => positive_outcomes.push((o, p)),
            Some(Valence::Negative) => negative_outcomes.push((o, p)),
            None => return Err(ExplainError::UnknownToken(Token::Outcome(o))),
        }
    }
    Ok(PathSummary {
        dominant_action: Action::ALL[best],
        dominant_frequency: counts[best] as f64 / path.len() as f64,
        per_action_concepts,
        positive_outcomes,
        negative_outcomes,
        horizon: path.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastMode {
    /// Consequences of the learned policy that the foil avoids.
    RelativeComplement,
    /// Unique consequences on both sides.
    #[default]
    SymmetricDifference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContrastSet {
    pub mode: ContrastMode,
    pub fact_only: BTreeSet<Token>,
    pub foil_only: BTreeSet<Token>,
}

impl ContrastSet {
    pub fn is_empty(&self) -> bool {
        self.fact_only.is_empty() && self.foil_only.is_empty()
    }
}

/// Concepts active at any step plus outcomes reaching `threshold` at any step.
pub fn path_tokens(path: &PathSeq, threshold: f64) -> BTreeSet<Token> {
    let mut tokens: BTreeSet<Token> = path
        .steps
        .iter()
        .flat_map(|s| s.concepts.active().map(Token::Concept))
        .collect();
    tokens.extend(
        outcome_peaks(path)
            .into_iter()
            .filter(|(_, p)| *p >= threshold)
            .map(|(o, _)| Token::Outcome(o)),
    );
    tokens
}

pub fn contrast(fact: &PathSeq, foil: &PathSeq, mode: ContrastMode, threshold: f64) -> ContrastSet {
    contrast_tokens(&path_tokens(fact, threshold), &path_tokens(foil, threshold), mode)
}

pub fn contrast_tokens(fact: &BTreeSet<Token>, foil: &BTreeSet<Token>, mode: ContrastMode) -> ContrastSet {
    let fact_only = fact.difference(foil).copied().collect();
    let foil_only = match mode {
        ContrastMode::RelativeComplement => BTreeSet::new(),
        ContrastMode::SymmetricDifference => foil.difference(fact).copied().collect(),
    };
    ContrastSet {
        mode,
        fact_only,
        foil_only,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    MostlyPerform,
    PerActionSituations,
    Contrastive,
}

pub enum RenderInput<'a> {
    Summary(&'a PathSummary),
    Contrast(&'a ContrastSet),
}

pub fn render(input: RenderInput<'_>, template: Template, vocab: &Vocabulary) -> Result<String, ExplainError> {
    match (input, template) {
        (RenderInput::Summary(s), Template::MostlyPerform) => render_mostly(s, vocab),
        (RenderInput::Summary(s), Template::PerActionSituations) => render_per_action(s, vocab),
        (RenderInput::Contrast(c), Template::Contrastive) => render_contrast(c, vocab),
        (_, template) => Err(ExplainError::TemplateMismatch { template }),
    }
}

/// Phrases for `tokens` in vocabulary order, comma separated.
fn listing(tokens: impl IntoIterator<Item = Token>, vocab: &Vocabulary) -> Result<String, ExplainError> {
    let mut items = tokens
        .into_iter()
        .map(|t| {
            let pos = vocab.position(t).ok_or(ExplainError::UnknownToken(t))?;
            let phrase = vocab.phrase(t).ok_or(ExplainError::UnknownToken(t))?;
            Ok((pos, phrase))
        })
        .collect::<Result<Vec<_>, ExplainError>>()?;
    items.sort_by_key(|(pos, _)| *pos);
    items.dedup();
    if items.is_empty() {
        return Ok(NOTHING.to_string());
    }
    Ok(items.into_iter().map(|(_, p)| p).collect::<Vec<_>>().join(", "))
}

fn actions_phrase(n: usize) -> String {
    if n == 1 {
        "1 action".to_string()
    } else {
        format!("{n} actions")
    }
}

fn outcome_clauses(s: &PathSummary, vocab: &Vocabulary) -> Result<(String, String), ExplainError> {
    let pos = listing(s.positive_outcomes.iter().map(|(o, _)| Token::Outcome(*o)), vocab)?;
    let neg = listing(s.negative_outcomes.iter().map(|(o, _)| Token::Outcome(*o)), vocab)?;
    Ok((pos, neg))
}

fn render_mostly(s: &PathSummary, vocab: &Vocabulary) -> Result<String, ExplainError> {
    let concepts = listing(
        s.per_action_concepts.values().flatten().map(|c| Token::Concept(*c)),
        vocab,
    )?;
    let (pos, neg) = outcome_clauses(s, vocab)?;
    Ok(format!(
        "For the next {} I will mostly move {}. During these actions, I will come across situations with: {}. This will bring me: {}; but also: {}.",
        actions_phrase(s.horizon),
        s.dominant_action,
        concepts,
        pos,
        neg
    ))
}

fn render_per_action(s: &PathSummary, vocab: &Vocabulary) -> Result<String, ExplainError> {
    let mut parts = Vec::new();
    for (action, concepts) in &s.per_action_concepts {
        let list = listing(concepts.iter().map(|c| Token::Concept(*c)), vocab)?;
        parts.push(format!("{action} when in situations with: {list}"));
    }
    let n = parts.len();
    let joined = parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| if i + 1 == n && n > 1 { format!("and {p}") } else { p })
        .collect::<Vec<_>>()
        .join("; ");
    let (pos, neg) = outcome_clauses(s, vocab)?;
    Ok(format!(
        "For the next {} I will move {}. These actions will bring me: {}; but also: {}.",
        actions_phrase(s.horizon),
        joined,
        pos,
        neg
    ))
}

fn split(tokens: &BTreeSet<Token>) -> (Vec<Token>, Vec<Token>) {
    tokens
        .iter()
        .copied()
        .partition(|t| matches!(t, Token::Concept(_)))
}

fn render_contrast(c: &ContrastSet, vocab: &Vocabulary) -> Result<String, ExplainError> {
    if c.is_empty() {
        return Ok(EMPTY_CONTRAST.to_string());
    }
    let (fact_c, fact_o) = split(&c.fact_only);
    let mut text = format!(
        "Unlike your suggestion, my policy leads me to situations with: {}; and it brings me: {}.",
        listing(fact_c, vocab)?,
        listing(fact_o, vocab)?
    );
    if c.mode == ContrastMode::SymmetricDifference {
        let (foil_c, foil_o) = split(&c.foil_only);
        text.push_str(&format!(
            " Whereas if I did as you suggest, I would come across situations with: {}; and it would bring me: {}.",
            listing(foil_c, vocab)?,
            listing(foil_o, vocab)?
        ));
    }
    Ok(text)
}

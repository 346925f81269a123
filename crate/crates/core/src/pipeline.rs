//! The full query pipeline shared by the command line and the HTTP service.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::explain::{
    contrast, render, summarize, ContrastMode, ContrastSet, ExplainError, PathSummary, RenderInput,
    Template, DEFAULT_THRESHOLD,
};
use crate::foil::{FoilContext, FoilError, FoilParams, FoilQuery};
use crate::gridworld::{EnvState, GridLayout};
use crate::interpret::Token;
use crate::rollout::{simulate, to_path, Trajectory, TrajectoryExport, RolloutMode};
use crate::transition::{EmpiricalModel, TransitionSource, WithFallback};

pub const PAYLOAD_VERSION: u32 = 1;

/// Which dynamics the pipeline simulates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionChoice {
    /// The layout's exact dynamics.
    True,
    /// The learned model, with the exact dynamics for unseen pairs.
    #[default]
    Learned,
    /// The learned model alone; unseen pairs truncate simulation.
    LearnedOnly,
}

/// Boxed transition source for `choice`.
pub fn transition_source<'a>(
    choice: TransitionChoice,
    layout: &'a GridLayout,
    model: &'a EmpiricalModel,
) -> Box<dyn TransitionSource + 'a> {
    match choice {
        TransitionChoice::True => Box::new(layout),
        TransitionChoice::Learned => Box::new(WithFallback {
            primary: model,
            fallback: layout,
        }),
        TransitionChoice::LearnedOnly => Box::new(model),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainOptions {
    pub params: FoilParams,
    pub mode: RolloutMode,
    pub contrast: ContrastMode,
    pub threshold: f64,
    pub transition: TransitionChoice,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            params: FoilParams::default(),
            mode: RolloutMode::MostProbable,
            contrast: ContrastMode::SymmetricDifference,
            threshold: DEFAULT_THRESHOLD,
            transition: TransitionChoice::Learned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Foil(#[from] FoilError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyExplanation {
    pub template: Template,
    /// `None` when the path is empty (the query state is terminal).
    pub text: Option<String>,
    pub summary: Option<PathSummary>,
    pub trajectory: TrajectoryExport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastExplanation {
    pub template: Template,
    pub text: String,
    #[serde(flatten)]
    pub set: ContrastSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationPayload {
    pub version: u32,
    pub query: String,
    pub start: EnvState,
    pub options: ExplainOptions,
    pub fact: PolicyExplanation,
    pub foil: PolicyExplanation,
    pub contrast: ContrastExplanation,
    /// First step at which the two trajectories differ.
    pub divergence_step: Option<usize>,
    /// Some step could not be translated because its transition is unknown.
    pub partial: bool,
    pub truncated_rollouts: u32,
}

fn explain_policy(
    layout: &GridLayout,
    trajectory: &Trajectory,
    source: &dyn TransitionSource,
    threshold: f64,
) -> Result<(PolicyExplanation, crate::rollout::PathSeq), ExplainError> {
    let path = to_path(layout, trajectory, source);
    let (summary, text) = if path.is_empty() {
        (None, None)
    } else {
        let summary = summarize(&path, threshold, &layout.vocabulary)?;
        let text = render(RenderInput::Summary(&summary), Template::MostlyPerform, &layout.vocabulary)?;
        (Some(summary), Some(text))
    };
    let explanation = PolicyExplanation {
        template: Template::MostlyPerform,
        text,
        summary,
        trajectory: TrajectoryExport::new(trajectory, &path),
    };
    Ok((explanation, path))
}

fn divergence(a: &Trajectory, b: &Trajectory) -> Option<usize> {
    let common = a.steps.iter().zip(&b.steps).position(|(x, y)| x != y);
    match common {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

/// Synthesizes the foil policy for `query` at `start`, simulates both
/// policies and explains the difference.
///
/// `ctx.source` is used for everything: the imposed rewards, the rollouts and
/// the outcome predictions.
pub fn explain_query(
    ctx: &FoilContext<'_>,
    query: &FoilQuery,
    start: &EnvState,
    options: &ExplainOptions,
) -> Result<ExplanationPayload, PipelineError> {
    let synthesis = ctx.synthesize(query, start, &options.params)?;
    let horizon = options.params.horizon();
    let fact_t = simulate(ctx.layout, start, ctx.q_t, horizon, ctx.source, options.mode);
    let foil_t = simulate(ctx.layout, start, &synthesis.policy(), horizon, ctx.source, options.mode);
    let (fact, fact_path) = explain_policy(ctx.layout, &fact_t, ctx.source, options.threshold)?;
    let (foil, foil_path) = explain_policy(ctx.layout, &foil_t, ctx.source, options.threshold)?;
    let set = contrast(&fact_path, &foil_path, options.contrast, options.threshold);
    let text = render(RenderInput::Contrast(&set), Template::Contrastive, &ctx.layout.vocabulary)?;
    Ok(ExplanationPayload {
        version: PAYLOAD_VERSION,
        query: query.to_string(),
        start: *start,
        options: options.clone(),
        divergence_step: divergence(&fact_t, &foil_t),
        partial: fact_path.is_partial() || foil_path.is_partial(),
        truncated_rollouts: synthesis.imposed.truncated_rollouts,
        fact,
        foil,
        contrast: ContrastExplanation {
            template: Template::Contrastive,
            text,
            set,
        },
    })
}

fn tokens(set: &std::collections::BTreeSet<Token>) -> String {
    if set.is_empty() {
        return "-".to_string();
    }
    set.iter().map(|t| t.id()).collect::<Vec<_>>().join(" ")
}

impl ExplanationPayload {
    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "query: {}", self.query);
        let _ = writeln!(out, "start: {}", self.start);
        for (name, e) in [("fact", &self.fact), ("foil", &self.foil)] {
            let actions: Vec<&str> = e.trajectory.records.iter().map(|r| r.action.name()).collect();
            let _ = writeln!(
                out,
                "{name} actions: {} ({})",
                if actions.is_empty() { "-".to_string() } else { actions.join(" ") },
                e.trajectory.final_state.status.name()
            );
        }
        match self.divergence_step {
            Some(i) => {
                let _ = writeln!(out, "diverges at step: {i}");
            }
            None => out.push_str("diverges at step: never\n"),
        }
        let _ = writeln!(out, "fact only: {}", tokens(&self.contrast.set.fact_only));
        let _ = writeln!(out, "foil only: {}", tokens(&self.contrast.set.foil_only));
        out.push('\n');
        for (name, e) in [("Fact", &self.fact), ("Foil", &self.foil)] {
            let text = e.text.as_deref().unwrap_or("The episode has already ended.");
            let _ = writeln!(out, "{name}: {text}");
        }
        let _ = writeln!(out, "Contrast: {}", self.contrast.text);
        if self.partial {
            out.push_str("note: partial explanation, some transitions are unknown to the model\n");
        }
        out
    }
}

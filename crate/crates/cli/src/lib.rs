//! Command implementations behind the `xrl` binary.
//!
//! Every command writes its report to the given writer so the output can be
//! compared byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use xrl::agent::{evaluate_policy, train, value_iteration};
use xrl::foil::QueryDocument;
use xrl::pipeline::{transition_source, ExplainOptions, TransitionChoice};
use xrl::{
    Coord, ContrastMode, EmpiricalModel, FoilContext, FoilQuery, GridLayout, ImposedReward,
    LearningConfig, QTable, RolloutMode,
};

#[derive(Debug, Parser)]
#[command(name = "xrl", version, about = "Contrastive what-if explanations for tabular agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Q-table and a transition model.
    Train(TrainArgs),
    /// Answer a what-if query from a state.
    Explain(ExplainArgs),
    /// Compare the greedy return from the start with the optimal value.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Layout file; the canonical layout when omitted.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Learning config in TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output prefix; writes PREFIX.qtab and PREFIX.tmodel.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub episodes: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    MostProbable,
    Sampled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContrastArg {
    Complement,
    Symmetric,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Text,
    Structured,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImposedArg {
    RewardGap,
    ValueGap,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransitionArg {
    True,
    Learned,
    LearnedOnly,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub qtab: PathBuf,
    #[arg(long)]
    pub tmodel: Option<PathBuf>,
    /// Query text, or a file holding query text or a JSON query document.
    #[arg(long)]
    pub query: String,
    /// Agent position to ask from, as `x,y`; the layout start by default.
    #[arg(long, value_parser = parse_coord)]
    pub at: Option<Coord>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "lambda-f")]
    pub lambda_f: Option<f64>,
    /// Discount the Q-table was trained with.
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long)]
    pub allow_short_horizon: bool,
    #[arg(long)]
    pub rollouts: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::MostProbable)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ContrastArg::Symmetric)]
    pub contrast: ContrastArg,
    #[arg(long, value_enum, default_value_t = ImposedArg::RewardGap)]
    pub imposed: ImposedArg,
    #[arg(long, value_enum, default_value_t = TransitionArg::Learned)]
    pub transition: TransitionArg,
    /// Minimum outcome probability worth mentioning.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub qtab: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Pre-create a session from this table.
    #[arg(long)]
    pub qtab: Option<PathBuf>,
    #[arg(long)]
    pub tmodel: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Keep session snapshots here and restore them on start.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Per-request time budget in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub budget_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_coord(s: &str) -> Result<Coord, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x = x.trim().parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y = y.trim().parse().map_err(|_| format!("bad y in {s:?}"))?;
    Ok(Coord::new(x, y))
}

pub fn load_layout(path: Option<&Path>) -> Result<GridLayout> {
    match path {
        None => Ok(GridLayout::canonical()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            GridLayout::parse(&text).with_context(|| format!("layout {}", p.display()))
        }
    }
}

pub fn load_qtab(path: &Path) -> Result<QTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    QTable::from_text(&text).with_context(|| format!("q-table {}", path.display()))
}

pub fn load_model(path: Option<&Path>) -> Result<EmpiricalModel> {
    match path {
        None => Ok(EmpiricalModel::new(0.0)),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            EmpiricalModel::from_text(&text).with_context(|| format!("transition model {}", p.display()))
        }
    }
}

fn load_query(arg: &str) -> Result<FoilQuery> {
    let path = Path::new(arg);
    if !path.is_file() {
        return Ok(FoilQuery::parse(arg)?);
    }
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let doc: QueryDocument = serde_json::from_str(&text).context("query document")?;
        Ok(FoilQuery::from_document(&doc)?)
    } else {
        Ok(FoilQuery::parse(text.trim_end())?)
    }
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let layout = load_layout(args.layout.as_deref())?;
    let mut config = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<LearningConfig>(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => LearningConfig::default(),
    };
    if let Some(e) = args.episodes {
        config.episodes = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let t = train(&layout, &config)?;
    if config.episodes == 0 {
        writeln!(err, "warning: untrained table (0 episodes)")?;
    }
    let qpath = with_suffix(&args.out, "qtab");
    let mpath = with_suffix(&args.out, "tmodel");
    fs::write(&qpath, t.q.to_text()).with_context(|| format!("writing {}", qpath.display()))?;
    fs::write(&mpath, t.model.to_text()).with_context(|| format!("writing {}", mpath.display()))?;

    let window = (t.returns.len() / 10).max(1).min(t.returns.len());
    let goals = t.returns.iter().filter(|r| **r > 0.0).count();
    writeln!(out, "episodes: {}", t.returns.len())?;
    writeln!(out, "seed: {}", config.seed)?;
    writeln!(out, "mean return, first {window}: {:.4}", mean(&t.returns[..window]))?;
    writeln!(out, "mean return, last {window}: {:.4}", mean(&t.returns[t.returns.len() - window..]))?;
    writeln!(out, "episodes with positive return: {goals}")?;
    writeln!(out, "table entries: {}", t.q.len())?;
    writeln!(out, "model pairs: {}", t.model.len())?;
    writeln!(out, "wrote {} and {}", qpath.display(), mpath.display())?;
    Ok(())
}

impl ExplainArgs {
    pub fn options(&self) -> ExplainOptions {
        let mut o = ExplainOptions::default();
        let p = &mut o.params;
        if let Some(v) = self.sigma {
            p.sigma = v;
        }
        if let Some(v) = self.epsilon {
            p.epsilon = v;
        }
        if let Some(v) = self.lambda_f {
            p.lambda_f = v;
        }
        if let Some(v) = self.rollouts {
            p.rollouts = v;
        }
        p.horizon = self.horizon;
        p.allow_short_horizon = self.allow_short_horizon;
        p.seed = self.seed;
        p.imposed_reward = match self.imposed {
            ImposedArg::RewardGap => ImposedReward::RewardGap,
            ImposedArg::ValueGap => ImposedReward::ValueGap,
        };
        o.mode = match self.mode {
            ModeArg::MostProbable => RolloutMode::MostProbable,
            ModeArg::Sampled => RolloutMode::Sampled(self.seed),
        };
        o.contrast = match self.contrast {
            ContrastArg::Complement => ContrastMode::RelativeComplement,
            ContrastArg::Symmetric => ContrastMode::SymmetricDifference,
        };
        o.transition = match self.transition {
            TransitionArg::True => TransitionChoice::True,
            TransitionArg::Learned => TransitionChoice::Learned,
            TransitionArg::LearnedOnly => TransitionChoice::LearnedOnly,
        };
        if let Some(t) = self.threshold {
            o.threshold = t;
        }
        o
    }
}

pub fn cmd_explain(args: &ExplainArgs, out: &mut dyn Write) -> Result<()> {
    let layout = load_layout(args.layout.as_deref())?;
    let q = load_qtab(&args.qtab)?;
    let model = load_model(args.tmodel.as_deref())?;
    let query = load_query(&args.query)?;
    let start = match args.at {
        None => layout.initial_state(),
        Some(c) => {
            if !layout.in_bounds(c) {
                bail!("--at {},{} is outside the grid", c.x, c.y);
            }
            layout.state_at(c)
        }
    };
    let options = args.options();
    let source = transition_source(options.transition, &layout, &model);
    let ctx = FoilContext {
        layout: &layout,
        source: source.as_ref(),
        q_t: &q,
        lambda: args.lambda,
    };
    let payload = xrl::explain_query(&ctx, &query, &start, &options)?;
    match args.format {
        FormatArg::Text => out.write_all(payload.to_text().as_bytes())?,
        FormatArg::Structured => {
            serde_json::to_writer_pretty(&mut *out, &payload)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let layout = load_layout(args.layout.as_deref())?;
    let q = load_qtab(&args.qtab)?;
    let greedy = evaluate_policy(&layout, &q, args.lambda, 1e-10)?;
    let vi = value_iteration(&layout, args.lambda, 1e-10)?;
    let optimal = vi.value(&layout.initial_state()).context("start state not solved")?;
    writeln!(out, "greedy\toptimal")?;
    writeln!(out, "{}\t{}", fmt_value(greedy), fmt_value(optimal))?;
    Ok(())
}

/// Six decimals with trailing zeros dropped.
fn fmt_value(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub async fn cmd_serve(args: &ServeArgs, err: &mut dyn Write) -> Result<()> {
    use xrl_server::{SessionSpec, SessionStore};
    let store = match &args.snapshots {
        Some(dir) => SessionStore::restore(dir.clone())?,
        None => SessionStore::default(),
    };
    if let Some(qpath) = &args.qtab {
        let spec = SessionSpec {
            layout: load_layout(args.layout.as_deref())?,
            trained: Some((load_qtab(qpath)?, load_model(args.tmodel.as_deref())?)),
            learning: LearningConfig::default(),
            defaults: ExplainOptions::default(),
            seed: args.seed,
        };
        let id = store.create(spec);
        writeln!(err, "session {id} ready")?;
    }
    let addr = std::net::SocketAddr::new(args.host, args.port);
    writeln!(err, "serving on http://{addr}/v1")?;
    xrl_server::serve(store, addr, std::time::Duration::from_millis(args.budget_ms)).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_parse() {
        assert_eq!(parse_coord("1,2"), Ok(Coord::new(1, 2)));
        assert_eq!(parse_coord(" 3 , 4"), Ok(Coord::new(3, 4)));
        assert!(parse_coord("3").is_err());
        assert!(parse_coord("a,1").is_err());
    }

    #[test]
    fn values_print_compactly() {
        assert_eq!(fmt_value(49.0), "49");
        assert_eq!(fmt_value(48.9999999999), "49");
        assert_eq!(fmt_value(-9.768148163527648), "-9.768148");
        assert_eq!(fmt_value(-0.0000001), "0");
    }

    #[test]
    fn suffixes_append() {
        assert_eq!(with_suffix(Path::new("out/agent"), "qtab"), PathBuf::from("out/agent.qtab"));
        assert_eq!(with_suffix(Path::new("a.b"), "tmodel"), PathBuf::from("a.b.tmodel"));
    }
}

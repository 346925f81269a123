use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXAMPLE: &str = "do Right until next_to_wall; do Up";

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).to_path_buf()
}

fn fixture(name: &str) -> String {
    root().join("tests/fixtures").join(name).display().to_string()
}

fn layout() -> String {
    root().join("../core/data/canonical.grid").display().to_string()
}

fn xrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrl")).args(args).output().unwrap()
}

fn explain(extra: &[&str]) -> Output {
    let (l, q, m) = (layout(), fixture("canonical.qtab"), fixture("canonical.tmodel"));
    let mut args = vec!["explain", "--layout", &l, "--qtab", &q, "--tmodel", &m, "--query", EXAMPLE];
    args.extend_from_slice(extra);
    xrl(&args)
}

/// Compares with the stored file; `XRL_BLESS=1` rewrites it instead.
fn check_golden(name: &str, got: &[u8]) {
    let path = root().join("tests/golden").join(name);
    if std::env::var_os("XRL_BLESS").is_some() {
        fs::write(&path, got).unwrap();
        return;
    }
    let want = fs::read(&path).unwrap();
    assert!(want == got, "{name} differs:\n{}", String::from_utf8_lossy(got));
}

#[test]
fn example_query_matches_golden_files() {
    for (file, extra) in [
        ("example_query.txt", vec![]),
        ("example_query.json", vec!["--format", "structured"]),
        ("example_query_at_1_1.txt", vec!["--at", "1,1", "--imposed", "value-gap"]),
        ("example_query_at_1_1.json", vec!["--at", "1,1", "--imposed", "value-gap", "--format", "structured"]),
    ] {
        let first = explain(&extra);
        assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
        let second = explain(&extra);
        assert_eq!(first.stdout, second.stdout);
        check_golden(file, &first.stdout);
    }
}

#[test]
fn example_query_off_the_start_has_fact_and_foil_clauses() {
    let out = explain(&["--at", "1,1", "--imposed", "value-gap"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let contrast = text.lines().find(|l| l.starts_with("Contrast: ")).unwrap();
    assert!(contrast.contains("Unlike your suggestion, my policy leads me to"));
    assert!(contrast.contains("Whereas if I did as you suggest"));
}

#[test]
fn sampled_runs_repeat_with_the_same_seed() {
    let a = explain(&["--mode", "sampled", "--seed", "5", "--rollouts", "50"]);
    let b = explain(&["--mode", "sampled", "--seed", "5", "--rollouts", "50"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn query_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let dsl = dir.path().join("q.txt");
    fs::write(&dsl, format!("{EXAMPLE}\n")).unwrap();
    let doc = dir.path().join("q.json");
    fs::write(&doc, r#"{"rules": [{"action": "Right", "until": "next_to_wall"}, {"action": "Up"}]}"#).unwrap();
    let inline = explain(&["--format", "structured"]).stdout;
    let (l, q, m) = (layout(), fixture("canonical.qtab"), fixture("canonical.tmodel"));
    for path in [&dsl, &doc] {
        let p = path.display().to_string();
        let out = xrl(&["explain", "--layout", &l, "--qtab", &q, "--tmodel", &m, "--query", &p, "--format", "structured"]);
        assert_eq!(out.stdout, inline);
    }
}

#[test]
fn bad_input_exits_nonzero_with_a_message() {
    let (l, q) = (layout(), fixture("canonical.qtab"));
    let out = xrl(&["explain", "--layout", &l, "--qtab", &q, "--query", "do Jump"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown action \"Jump\" at line 1, column 4"), "{err}");

    let out = xrl(&["explain", "--qtab", &q, "--query", "do Up", "--sigma", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));

    let out = xrl(&["explain", "--qtab", &q, "--query", "do Up", "--at", "10,0"]);
    assert!(!out.status.success());

    let out = xrl(&["explain", "--qtab", "/nonexistent.qtab", "--query", "do Up"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.qtab"));
}

#[test]
fn zero_episode_training_warns_and_writes_only_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("agent").display().to_string();
    let out = xrl(&["train", "--out", &prefix, "--episodes", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("untrained table"));
    let mut names: Vec<String> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["agent.qtab", "agent.tmodel"]);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("learn.toml");
    fs::write(&config, "episodes = 300\nalpha = 0.2\nseed = 9\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let c = config.display().to_string();
    for p in [&a, &b] {
        let out = xrl(&["train", "--config", &c, "--out", &p.display().to_string()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("episodes: 300"));
    }
    for ext in ["qtab", "tmodel"] {
        assert_eq!(fs::read(a.with_extension(ext)).unwrap(), fs::read(b.with_extension(ext)).unwrap());
    }
    fs::write(&config, "episodes = 10\nunknown = 1\n").unwrap();
    let out = xrl(&["train", "--config", &c, "--out", &a.display().to_string()]);
    assert!(!out.status.success());
}

#[test]
fn eval_on_the_two_tile_chain() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("chain.grid");
    fs::write(&grid, "width: 2\nheight: 1\np_intent: 1\nmap:\nSG\n").unwrap();
    let prefix = dir.path().join("chain").display().to_string();
    let g = grid.display().to_string();
    assert!(xrl(&["train", "--layout", &g, "--out", &prefix, "--episodes", "2000"]).status.success());
    let q = format!("{prefix}.qtab");
    let out = xrl(&["eval", "--layout", &g, "--qtab", &q]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "greedy\toptimal\n49\t49\n");
}

#[test]
fn structured_output_matches_service_payload() {
    use xrl::pipeline::ExplainOptions;
    use xrl_server::Session;
    let layout = xrl::GridLayout::parse(&fs::read_to_string(layout()).unwrap()).unwrap();
    let q = xrl::QTable::from_text(&fs::read_to_string(fixture("canonical.qtab")).unwrap()).unwrap();
    let m = xrl::EmpiricalModel::from_text(&fs::read_to_string(fixture("canonical.tmodel")).unwrap()).unwrap();
    let mut session = Session::new("s1".into(), layout, q, m, 0.9, ExplainOptions::default(), 0);
    let payload = session.query(xrl::FoilQuery::parse(EXAMPLE).unwrap(), ExplainOptions::default()).unwrap();
    let golden: serde_json::Value =
        serde_json::from_slice(&fs::read(root().join("tests/golden/example_query.json")).unwrap()).unwrap();
    assert_eq!(serde_json::to_value(&payload).unwrap(), golden);
}

#[test]
fn example_query_foil_starts_right_from_1_1() {
    use xrl::foil::{FoilContext, FoilParams, ImposedReward};
    use xrl::Policy;
    let l = xrl::GridLayout::parse(&fs::read_to_string(layout()).unwrap()).unwrap();
    let q = xrl::QTable::from_text(&fs::read_to_string(fixture("canonical.qtab")).unwrap()).unwrap();
    let s_t = l.state_at(xrl::Coord::new(1, 1));
    let f = l.features(&s_t);
    assert_ne!(q.greedy(&f), xrl::Action::Right);
    let ctx = FoilContext { layout: &l, source: &l, q_t: &q, lambda: 0.9 };
    let params = FoilParams { imposed_reward: ImposedReward::ValueGap, ..Default::default() };
    let syn = ctx.synthesize(&xrl::FoilQuery::parse(EXAMPLE).unwrap(), &s_t, &params).unwrap();
    assert_eq!(syn.policy().action(&f), xrl::Action::Right);
}

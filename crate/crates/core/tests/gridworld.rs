mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xrl::{Action, EnvState, GridLayout, Status};

#[test]
fn intended_move_frequency() {
    let l = GridLayout::open(5, 5, c(0, 0), c(4, 4));
    let s = l.state_at(c(2, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| l.step(&s, Action::Up, &mut rng).0.agent == c(2, 3))
        .count();
    let freq = hits as f64 / n as f64;
    assert!((freq - 0.8).abs() <= 0.01, "{freq}");
}

fn sampled_tv(l: &GridLayout, s: &EnvState, a: Action, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        *counts.entry(l.step(s, a, &mut rng).0.without_clock()).or_insert(0usize) += 1;
    }
    let exact = clock_free(&l.true_transition(s, a));
    let keys: std::collections::BTreeSet<_> = counts.keys().chain(exact.keys()).collect();
    keys.into_iter()
        .map(|k| {
            let p = counts.get(k).copied().unwrap_or(0) as f64 / n as f64;
            (p - exact.get(k).copied().unwrap_or(0.0)).abs()
        })
        .sum::<f64>()
        / 2.0
}

#[test]
fn sampling_matches_true_transition() {
    let l = micro4(0.8);
    let cases = [
        (l.initial_state(), Action::Up),
        (l.state_at(c(1, 1)), Action::Right),
        (l.state_at(c(2, 2)), Action::Down),
        (l.state_at(c(0, 3)), Action::Left),
    ];
    for (i, (s, a)) in cases.iter().enumerate() {
        let tv = sampled_tv(&l, s, *a, 100_000, i as u64);
        assert!(tv <= 0.01, "{s:?} {a:?}: {tv}");
    }
}

#[test]
fn true_transition_matches_oracle_everywhere() {
    for p in [0.8, 1.0, 0.5] {
        let l = micro4(p);
        for s in all_running_states(&l) {
            for a in Action::ALL {
                let d = l.true_transition(&s, a);
                assert!((d.total() - 1.0).abs() <= 1e-12);
                assert!(d.iter().all(|(_, p)| *p > 0.0));
                assert_same_distribution(&clock_free(&d), &oracle_transition(&l, &s, a), 1e-12);
            }
        }
    }
}

#[test]
fn reward_decomposition() {
    let l = micro4(0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in all_running_states(&l) {
        for a in Action::ALL {
            for (next, _) in l.true_transition(&s, a).iter() {
                assert_eq!(l.reward(&s, next), oracle_reward(&l, &s, next), "{s:?} -> {next:?}");
            }
            let (next, r) = l.step(&s, a, &mut rng);
            assert_eq!(r, oracle_reward(&l, &s, &next));
        }
    }
}

#[test]
fn terminal_states_absorb() {
    let l = micro4(0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for status in [Status::AtGoal, Status::InTrap, Status::CaughtByMonster] {
        let mut s = l.initial_state();
        s.status = status;
        for a in Action::ALL {
            let d = l.true_transition(&s, a);
            assert_eq!(d.len(), 1);
            assert_eq!(d.probability(&s), 1.0);
            assert_eq!(l.step(&s, a, &mut rng), (s, 0.0));
        }
    }
}

#[test]
fn deterministic_examples() {
    let l = GridLayout::open(4, 4, c(0, 0), c(3, 3)).with_p_intent(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, r) = l.step(&l.initial_state(), Action::Up, &mut rng);
    assert_eq!(next.agent, c(0, 1));
    assert_eq!(r, l.rewards.step_penalty);
    assert_eq!(l.true_transition(&l.initial_state(), Action::Up).len(), 1);
    let (next, r) = l.step(&l.state_at(c(2, 3)), Action::Right, &mut rng);
    assert_eq!(next.status, Status::AtGoal);
    assert_eq!(r, l.rewards.step_penalty + l.rewards.goal_reward);
}

#[test]
fn open_surroundings_have_three_outcomes() {
    let l = GridLayout::open(5, 5, c(0, 0), c(4, 4));
    let d = l.true_transition(&l.state_at(c(2, 2)), Action::Left);
    let mut probs: Vec<f64> = d.iter().map(|(_, p)| *p).collect();
    probs.sort_by(f64::total_cmp);
    assert_eq!(d.len(), 3);
    assert!((probs[0] - 0.1).abs() < 1e-12 && (probs[1] - 0.1).abs() < 1e-12 && (probs[2] - 0.8).abs() < 1e-12);
}

#[test]
fn step_is_reproducible() {
    let l = GridLayout::canonical();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut s = l.initial_state();
        let mut out = Vec::new();
        for i in 0..200 {
            let (n, r) = l.step(&s, Action::ALL[i % 4], &mut rng);
            out.push((n, r.to_bits()));
            s = if n.is_terminal() { l.initial_state() } else { n };
        }
        out
    };
    assert_eq!(run(), run());
}

/// Tables built by hand for `micro4` with the monster at (3,0). Rows are
/// listed top (y = 3) first; a letter marks `true`.
const ADJ_FOREST: [&str; 4] = [".F..", "F.F.", ".F..", "...."];
const ADJ_TRAP: [&str; 4] = ["....", "..T.", ".T.T", "..T."];
const ADJ_MONSTER: [&str; 4] = ["....", "....", "...M", "..M."];

fn table(rows: &[&str; 4], x: i32, y: i32) -> bool {
    rows[(3 - y) as usize].as_bytes()[x as usize] != b'.'
}

#[test]
fn features_match_hand_table() {
    let l = micro4(0.8);
    for s in all_running_states(&l).into_iter().filter(|s| s.monster == Some(c(3, 0))) {
        let (x, y) = (s.agent.x, s.agent.y);
        let f = l.features(&s);
        assert_eq!((f.x, f.y), (x, y));
        assert_eq!(f.adj_forest, table(&ADJ_FOREST, x, y), "forest at {x},{y}");
        assert_eq!(f.adj_trap, table(&ADJ_TRAP, x, y), "trap at {x},{y}");
        assert_eq!(f.adj_monster, table(&ADJ_MONSTER, x, y), "monster at {x},{y}");
    }
}

#[test]
fn canonical_layout_round_trips() {
    let l = GridLayout::canonical();
    assert_eq!(GridLayout::parse(&l.to_grid_text()).unwrap(), l);
    let m = l.monster_start.unwrap();
    assert!(l.zone.contains(m) && m.x >= 5);
}

#[test]
fn four_by_four_file() {
    let text = "width: 4\nheight: 4\nmap:\n...G\n....\n....\nS...\n";
    let l = GridLayout::parse(text).unwrap();
    assert_eq!((l.width, l.height, l.start, l.goal), (4, 4, c(0, 0), c(3, 3)));
    assert!(l.forests.is_empty() && l.traps.is_empty() && l.monster_start.is_none());
}

#[test]
fn trap_outside_zone_rejected() {
    let text = "width: 4\nheight: 1\nzone: 2,0,3,0\nmap:\nST.G\n";
    let err = GridLayout::parse(text).unwrap_err();
    assert!(err.to_string().contains("trap outside zone"), "{err}");
}

fn arb_state() -> impl Strategy<Value = EnvState> {
    (0..10i32, 0..10i32, 5..10i32, 0..10i32).prop_map(|(ax, ay, mx, my)| EnvState {
        agent: c(ax, ay),
        monster: Some(c(mx, my)),
        status: Status::Running,
        step_count: 0,
    })
}

proptest! {
    #[test]
    fn monster_stays_in_zone_and_never_retreats(s in arb_state(), a in 0..4usize, seed in any::<u64>()) {
        let l = GridLayout::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (next, _) = l.step(&s, Action::ALL[a], &mut rng);
        let m = next.monster.unwrap();
        prop_assert!(l.zone.contains(m));
        if next.status != Status::AtGoal && next.status != Status::InTrap && m != s.monster.unwrap() {
            prop_assert!(m.manhattan(next.agent) < s.monster.unwrap().manhattan(next.agent));
        }
    }

    #[test]
    fn distributions_sum_to_one(s in arb_state(), a in 0..4usize, p in 0.0..=1.0f64) {
        let l = GridLayout::canonical().with_p_intent(p);
        let d = l.true_transition(&s, Action::ALL[a]);
        prop_assert!((d.total() - 1.0).abs() <= 1e-12);
        prop_assert!(d.iter().all(|(_, q)| *q >= 0.0));
    }
}

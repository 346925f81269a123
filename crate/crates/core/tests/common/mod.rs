//! Independent re-implementation of the grid dynamics, written from the
//! rules rather than from the library, plus shared micro-worlds.
#![allow(dead_code)]

use std::collections::BTreeMap;

use xrl::gridworld::Rect;
use xrl::{Action, Coord, EnvState, GridLayout, Status};

pub fn c(x: i32, y: i32) -> Coord {
    Coord::new(x, y)
}

/// 4x4 world: forest (1,2), trap (2,1), monster starting at (3,0), zone is
/// the whole grid.
pub fn micro4(p_intent: f64) -> GridLayout {
    let mut l = GridLayout::open(4, 4, c(0, 0), c(3, 3)).with_p_intent(p_intent);
    l.forests.insert(c(1, 2));
    l.traps.insert(c(2, 1));
    l.monster_start = Some(c(3, 0));
    l.zone = Rect::new(0, 0, 3, 3);
    l.validate().unwrap();
    l
}

// Hand-drawn concept tables for `micro4`, top row first.
pub const NEXT_TO_FOREST: [&str; 4] = [".F..", "F.F.", ".F..", "...."];
pub const NEXT_TO_TRAP: [&str; 4] = ["....", "..T.", ".T.T", "..T."];
pub const NEXT_TO_WALL: [&str; 4] = ["WWWW", "W..W", "W..W", "WWWW"];
pub const IN_FOREST: [&str; 4] = ["....", ".F..", "....", "...."];

pub fn table(rows: &[&str; 4], x: i32, y: i32) -> bool {
    rows[(3 - y) as usize].as_bytes()[x as usize] != b'.'
}

/// Every running state of `l` with the monster anywhere in the zone.
pub fn all_running_states(l: &GridLayout) -> Vec<EnvState> {
    let mut out = Vec::new();
    let monsters: Vec<Option<Coord>> = match l.monster_start {
        None => vec![None],
        Some(_) => l.tiles().filter(|t| l.zone.contains(*t)).map(Some).collect(),
    };
    for agent in l.tiles() {
        for m in &monsters {
            out.push(EnvState {
                agent,
                monster: *m,
                status: Status::Running,
                step_count: 0,
            });
        }
    }
    out
}

fn delta(a: Action) -> (i32, i32) {
    match a {
        Action::Up => (0, 1),
        Action::Down => (0, -1),
        Action::Left => (-1, 0),
        Action::Right => (1, 0),
    }
}

fn sideways(a: Action) -> [Action; 2] {
    match a {
        Action::Up | Action::Down => [Action::Left, Action::Right],
        Action::Left | Action::Right => [Action::Up, Action::Down],
    }
}

fn inside(l: &GridLayout, p: Coord) -> bool {
    p.x >= 0 && p.y >= 0 && p.x < l.width && p.y < l.height
}

fn in_zone(l: &GridLayout, p: Coord) -> bool {
    p.x >= l.zone.min.x && p.x <= l.zone.max.x && p.y >= l.zone.min.y && p.y <= l.zone.max.y
}

fn dist(a: Coord, b: Coord) -> i32 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// Successor when `realized` is the direction actually taken.
pub fn oracle_move(l: &GridLayout, s: &EnvState, realized: Action) -> EnvState {
    let (dx, dy) = delta(realized);
    let target = Coord::new(s.agent.x + dx, s.agent.y + dy);
    let agent = if inside(l, target) { target } else { s.agent };
    let mut next = EnvState {
        agent,
        monster: s.monster,
        status: Status::Running,
        step_count: s.step_count + 1,
    };
    if agent == l.goal {
        next.status = Status::AtGoal;
        return next;
    }
    if l.traps.contains(&agent) {
        next.status = Status::InTrap;
        return next;
    }
    if let Some(m) = s.monster {
        let mut m2 = m;
        if in_zone(l, agent) {
            if agent.x != m.x {
                m2.x += (agent.x - m.x).signum();
            } else if agent.y != m.y {
                m2.y += (agent.y - m.y).signum();
            }
        }
        next.monster = Some(m2);
        if dist(agent, m2) <= 1 {
            next.status = Status::CaughtByMonster;
        }
    }
    next
}

/// Exact successor distribution without clocks, zero-probability branches
/// dropped.
pub fn oracle_transition(l: &GridLayout, s: &EnvState, a: Action) -> BTreeMap<EnvState, f64> {
    let mut out = BTreeMap::new();
    if s.status != Status::Running {
        out.insert(s.without_clock(), 1.0);
        return out;
    }
    let side = (1.0 - l.p_intent) / 2.0;
    let [s1, s2] = sideways(a);
    for (dir, p) in [(a, l.p_intent), (s1, side), (s2, side)] {
        if p > 0.0 {
            *out.entry(oracle_move(l, s, dir).without_clock()).or_insert(0.0) += p;
        }
    }
    out
}

pub fn oracle_reward(l: &GridLayout, prev: &EnvState, next: &EnvState) -> f64 {
    if prev.status != Status::Running {
        return 0.0;
    }
    let r = &l.rewards;
    let mut total = r.step_penalty;
    if l.forests.contains(&next.agent) {
        total += r.forest_penalty;
    }
    if matches!(next.status, Status::InTrap | Status::CaughtByMonster) {
        total += r.terminal_penalty;
    }
    if next.status == Status::AtGoal {
        total += r.goal_reward;
    }
    total
}

/// Expected [AtGoal, InTrap, NextToMonster, InForest] after one step.
pub fn oracle_outcomes(l: &GridLayout, s: &EnvState, a: Action) -> [f64; 4] {
    let mut o = [0.0; 4];
    for (next, p) in oracle_transition(l, s, a) {
        if next.status == Status::AtGoal {
            o[0] += p;
        }
        if next.status == Status::InTrap {
            o[1] += p;
        }
        if next.monster.is_some_and(|m| dist(m, next.agent) <= 1) {
            o[2] += p;
        }
        if l.forests.contains(&next.agent) {
            o[3] += p;
        }
    }
    o
}

pub fn clock_free(d: &xrl::Distribution) -> BTreeMap<EnvState, f64> {
    let mut out = BTreeMap::new();
    for (s, p) in d.iter() {
        *out.entry(s.without_clock()).or_insert(0.0) += *p;
    }
    out
}

pub fn assert_same_distribution(a: &BTreeMap<EnvState, f64>, b: &BTreeMap<EnvState, f64>, tol: f64) {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    for k in keys {
        let pa = a.get(k).copied().unwrap_or(0.0);
        let pb = b.get(k).copied().unwrap_or(0.0);
        assert!((pa - pb).abs() <= tol, "{k:?}: {pa} vs {pb}");
    }
}

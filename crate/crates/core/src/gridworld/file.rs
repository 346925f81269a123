//! Text grid format.
//!
//! ```text
//! width: 4
//! height: 3
//! zone: 2,0,3,2
//! p_intent: 0.8
//! step_penalty: -1
//! forest_penalty: -5
//! terminal_penalty: -50
//! goal_reward: 50
//! concept: next_to_wall = beside a wall      (optional vocabulary block)
//! outcome: AtGoal + = at the goal
//! map:
//! ...G
//! .F.M
//! S..T
//! ```
//!
//! Rows are listed top first. Lines starting with `#` are comments.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use super::{Coord, GridLayout, Rect, RewardConfig};
use crate::interpret::{Concept, Outcome, OutcomeEntry, Valence, Vocabulary};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct LayoutParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> LayoutParseError {
    LayoutParseError {
        line,
        column,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(
    value: &str,
    line: usize,
    column: usize,
    key: &str,
) -> Result<T, LayoutParseError> {
    value
        .trim()
        .parse()
        .map_err(|_| err(line, column, format!("{key}: cannot parse {value:?}")))
}

pub(super) fn parse(text: &str) -> Result<GridLayout, LayoutParseError> {
    let mut width: Option<i32> = None;
    let mut height: Option<i32> = None;
    let mut zone: Option<Rect> = None;
    let mut p_intent = 0.8;
    let mut rewards = RewardConfig::default();
    let mut concepts: Vec<(Concept, String)> = Vec::new();
    let mut outcomes: Vec<OutcomeEntry> = Vec::new();
    let mut vocab_line = None;

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut map_line = None;
    for (no, raw) in lines.by_ref() {
        let line = raw.trim_end();
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indent = line.len() - trimmed.len();
        let Some((key, value)) = trimmed.split_once(':') else {
            return Err(err(no, indent + 1, "expected `key: value`"));
        };
        let lead = value.len() - value.trim_start().len();
        let vcol = indent + key.len() + 2 + lead;
        let key = key.trim();
        match key {
            "width" => width = Some(parse_num(value, no, vcol, key)?),
            "height" => height = Some(parse_num(value, no, vcol, key)?),
            "p_intent" => p_intent = parse_num(value, no, vcol, key)?,
            "step_penalty" => rewards.step_penalty = parse_num(value, no, vcol, key)?,
            "forest_penalty" => rewards.forest_penalty = parse_num(value, no, vcol, key)?,
            "terminal_penalty" => rewards.terminal_penalty = parse_num(value, no, vcol, key)?,
            "goal_reward" => rewards.goal_reward = parse_num(value, no, vcol, key)?,
            "zone" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 4 {
                    return Err(err(no, vcol, "zone: expected x1,y1,x2,y2"));
                }
                let mut v = [0i32; 4];
                for (slot, part) in v.iter_mut().zip(&parts) {
                    *slot = parse_num(part, no, vcol, "zone")?;
                }
                zone = Some(Rect::new(v[0], v[1], v[2], v[3]));
            }
            "concept" => {
                vocab_line.get_or_insert(no);
                let (id, phrase) = value
                    .split_once('=')
                    .ok_or_else(|| err(no, vcol, "concept: expected `id = phrase`"))?;
                let c = Concept::parse(id.trim())
                    .ok_or_else(|| err(no, vcol, format!("unknown concept {:?}", id.trim())))?;
                concepts.push((c, phrase.trim().to_string()));
            }
            "outcome" => {
                vocab_line.get_or_insert(no);
                let (head, phrase) = value
                    .split_once('=')
                    .ok_or_else(|| err(no, vcol, "outcome: expected `id +|- = phrase`"))?;
                let mut head = head.split_whitespace();
                let id = head.next().unwrap_or("");
                let o = Outcome::parse(id)
                    .ok_or_else(|| err(no, vcol, format!("unknown outcome {id:?}")))?;
                let valence = match head.next() {
                    Some("+") => Valence::Positive,
                    Some("-") => Valence::Negative,
                    _ => return Err(err(no, vcol, "outcome: valence must be + or -")),
                };
                outcomes.push(OutcomeEntry {
                    outcome: o,
                    phrase: phrase.trim().to_string(),
                    valence,
                });
            }
            "map" => {
                map_line = Some(no);
                break;
            }
            other => return Err(err(no, indent + 1, format!("unknown key {other:?}"))),
        }
    }

    let map_line = map_line.ok_or_else(|| err(text.lines().count() + 1, 1, "missing `map:`"))?;
    let width = width.ok_or_else(|| err(map_line, 1, "missing `width`"))?;
    let height = height.ok_or_else(|| err(map_line, 1, "missing `height`"))?;
    if width <= 0 || height <= 0 {
        return Err(err(map_line, 1, "width and height must be positive"));
    }

    let mut start = None;
    let mut goal = None;
    let mut monster = None;
    let mut forests = BTreeSet::new();
    let mut traps = BTreeSet::new();
    let mut row = 0;
    let mut last_line = map_line;
    for (no, raw) in lines {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        last_line = no;
        if row >= height {
            return Err(err(no, 1, format!("more than {height} map rows")));
        }
        if line.chars().count() != width as usize {
            return Err(err(
                no,
                1,
                format!("expected {width} tiles, found {}", line.chars().count()),
            ));
        }
        let y = height - 1 - row;
        for (x, ch) in line.chars().enumerate() {
            let c = Coord::new(x as i32, y);
            let col = x + 1;
            let once = |slot: &mut Option<Coord>, name: &str| {
                if slot.replace(c).is_some() {
                    Err(err(no, col, format!("more than one {name}")))
                } else {
                    Ok(())
                }
            };
            match ch {
                '.' => {}
                'S' => once(&mut start, "start `S`")?,
                'G' => once(&mut goal, "goal `G`")?,
                'M' => once(&mut monster, "monster `M`")?,
                'F' => {
                    forests.insert(c);
                }
                'T' => {
                    traps.insert(c);
                }
                other => return Err(err(no, col, format!("unexpected tile {other:?}"))),
            }
        }
        row += 1;
    }
    if row != height {
        return Err(err(last_line, 1, format!("expected {height} map rows, found {row}")));
    }

    let vocabulary = if let Some(no) = vocab_line {
        let v = Vocabulary { concepts, outcomes };
        if !v.is_complete() {
            return Err(err(
                no,
                1,
                "vocabulary must list every concept and outcome exactly once",
            ));
        }
        v
    } else {
        Vocabulary::default()
    };

    Ok(GridLayout {
        width,
        height,
        start: start.ok_or_else(|| err(map_line, 1, "map has no start `S`"))?,
        goal: goal.ok_or_else(|| err(map_line, 1, "map has no goal `G`"))?,
        forests,
        traps,
        monster_start: monster,
        zone: zone.unwrap_or_else(|| Rect::new(0, 0, width - 1, height - 1)),
        p_intent,
        rewards,
        vocabulary,
    })
}

pub(super) fn render(layout: &GridLayout) -> String {
    let mut out = String::new();
    let _ = write_layout(layout, &mut out);
    out
}

fn write_layout(l: &GridLayout, out: &mut String) -> fmt::Result {
    writeln!(out, "width: {}", l.width)?;
    writeln!(out, "height: {}", l.height)?;
    writeln!(
        out,
        "zone: {},{},{},{}",
        l.zone.min.x, l.zone.min.y, l.zone.max.x, l.zone.max.y
    )?;
    writeln!(out, "p_intent: {}", l.p_intent)?;
    writeln!(out, "step_penalty: {}", l.rewards.step_penalty)?;
    writeln!(out, "forest_penalty: {}", l.rewards.forest_penalty)?;
    writeln!(out, "terminal_penalty: {}", l.rewards.terminal_penalty)?;
    writeln!(out, "goal_reward: {}", l.rewards.goal_reward)?;
    if l.vocabulary != Vocabulary::default() {
        for (c, phrase) in &l.vocabulary.concepts {
            writeln!(out, "concept: {} = {}", c.id(), phrase)?;
        }
        for e in &l.vocabulary.outcomes {
            let sign = match e.valence {
                Valence::Positive => '+',
                Valence::Negative => '-',
            };
            writeln!(out, "outcome: {} {} = {}", e.outcome.id(), sign, e.phrase)?;
        }
    }
    writeln!(out, "map:")?;
    for y in (0..l.height).rev() {
        for x in 0..l.width {
            let c = Coord::new(x, y);
            let ch = if c == l.start {
                'S'
            } else if c == l.goal {
                'G'
            } else if Some(c) == l.monster_start {
                'M'
            } else if l.traps.contains(&c) {
                'T'
            } else if l.forests.contains(&c) {
                'F'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    Ok(())
}

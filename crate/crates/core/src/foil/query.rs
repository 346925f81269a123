//! Foil query language.
//!
//! ```text
//! do Right until next_to_wall; do Up
//! do Left while not (next_to_trap or in_forest)
//! ```
//!
//! Statements are separated by `;` or newlines. Conditions combine concept
//! names with `and`, `or`, `not` and parentheses (`not` binds tightest, then
//! `and`, then `or`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gridworld::Action;
use crate::interpret::{Concept, ConceptVec};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Concept(Concept),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, c: &ConceptVec) -> bool {
        match self {
            Expr::Concept(k) => c.get(*k),
            Expr::Not(e) => !e.eval(c),
            Expr::And(a, b) => a.eval(c) && b.eval(c),
            Expr::Or(a, b) => a.eval(c) || b.eval(c),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Or(..) => 0,
            Expr::And(..) => 1,
            Expr::Not(_) | Expr::Concept(_) => 2,
        }
    }

    fn fmt_child(&self, child: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if child.precedence() < min {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Concept(c) => f.write_str(c.id()),
            Expr::Not(e) => {
                f.write_str("not ")?;
                self.fmt_child(e, 2, f)
            }
            Expr::And(a, b) => {
                self.fmt_child(a, 1, f)?;
                f.write_str(" and ")?;
                // right operand needs parens for right-nested trees
                self.fmt_child(b, 2, f)
            }
            Expr::Or(a, b) => {
                self.fmt_child(a, 0, f)?;
                f.write_str(" or ")?;
                self.fmt_child(b, 1, f)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Active until the predicate first holds.
    Until(Expr),
    /// Active while the predicate holds.
    While(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FoilRule {
    pub action: Action,
    /// `None`: the rule applies for a single step.
    pub condition: Option<Condition>,
}

impl fmt::Display for FoilRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "do {}", self.action)?;
        match &self.condition {
            Some(Condition::Until(e)) => write!(f, " until {e}"),
            Some(Condition::While(e)) => write!(f, " while {e}"),
            None => Ok(()),
        }
    }
}

/// Ordered conditional action rules describing the user's alternative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FoilQuery {
    rules: Vec<FoilRule>,
}

impl fmt::Display for FoilQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Position in a rule list. `fired` marks a single-step rule that has
/// already been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RuleCursor {
    pub index: usize,
    pub fired: bool,
}

impl RuleCursor {
    pub fn at(index: usize) -> Self {
        Self {
            index,
            fired: false,
        }
    }
}

impl FoilQuery {
    pub fn new(rules: Vec<FoilRule>) -> Result<Self, QueryError> {
        if rules.is_empty() {
            return Err(QueryError::Empty);
        }
        Ok(Self { rules })
    }

    pub fn parse(text: &str) -> Result<Self, QueryError> {
        Parser::new(text)?.query()
    }

    /// Parses the structured form:
    /// `{"rules": [{"action": "Right", "until": "next_to_wall"}, {"action": "Up"}]}`.
    pub fn from_document(doc: &QueryDocument) -> Result<Self, QueryError> {
        let mut rules = Vec::with_capacity(doc.rules.len());
        for r in &doc.rules {
            let action = Action::parse(&r.action).ok_or_else(|| QueryError::UnknownAction {
                name: r.action.clone(),
                at: Position::start(),
            })?;
            let condition = match (&r.until, &r.while_) {
                (Some(_), Some(_)) => {
                    return Err(QueryError::Syntax {
                        message: "a rule takes at most one of `until` and `while`".into(),
                        at: Position::start(),
                    })
                }
                (Some(e), None) => Some(Condition::Until(parse_expr(e)?)),
                (None, Some(e)) => Some(Condition::While(parse_expr(e)?)),
                (None, None) => None,
            };
            rules.push(FoilRule { action, condition });
        }
        Self::new(rules)
    }

    pub fn to_document(&self) -> QueryDocument {
        QueryDocument {
            rules: self
                .rules
                .iter()
                .map(|r| {
                    let (until, while_) = match &r.condition {
                        Some(Condition::Until(e)) => (Some(e.to_string()), None),
                        Some(Condition::While(e)) => (None, Some(e.to_string())),
                        None => (None, None),
                    };
                    RuleDocument {
                        action: r.action.to_string(),
                        until,
                        while_,
                    }
                })
                .collect(),
        }
    }

    pub fn rules(&self) -> &[FoilRule] {
        &self.rules
    }

    /// The foil action prescribed in a situation, and the cursor for the
    /// next step. Returns `None` once every rule has been consumed.
    pub fn active_action(&self, c: &ConceptVec, cursor: RuleCursor) -> (Option<Action>, RuleCursor) {
        let mut cur = cursor;
        loop {
            if cur.fired {
                cur = RuleCursor::at(cur.index + 1);
            }
            let Some(rule) = self.rules.get(cur.index) else {
                return (None, cur);
            };
            match &rule.condition {
                Some(Condition::Until(e)) => {
                    if e.eval(c) {
                        cur = RuleCursor::at(cur.index + 1);
                    } else {
                        return (Some(rule.action), cur);
                    }
                }
                Some(Condition::While(e)) => {
                    if e.eval(c) {
                        return (Some(rule.action), cur);
                    }
                    cur = RuleCursor::at(cur.index + 1);
                }
                None => {
                    return (
                        Some(rule.action),
                        RuleCursor {
                            index: cur.index,
                            fired: true,
                        },
                    )
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryDocument {
    pub rules: Vec<RuleDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDocument {
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<String>,
    #[serde(default, rename = "while", skip_serializing_if = "Option::is_none")]
    pub while_: Option<String>,
}

/// 1-based line and column plus 0-based byte offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Position {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl Position {
    fn start() -> Self {
        Self {
            offset: 0,
            line: 1,
            column: 1,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("empty query")]
    Empty,
    #[error("syntax error at {at}: {message}")]
    Syntax { message: String, at: Position },
    #[error("unknown action {name:?} at {at}")]
    UnknownAction { name: String, at: Position },
    #[error("unknown concept {name:?} at {at}")]
    UnknownConcept { name: String, at: Position },
}

impl QueryError {
    pub fn position(&self) -> Option<Position> {
        match self {
            QueryError::Empty => None,
            QueryError::Syntax { at, .. }
            | QueryError::UnknownAction { at, .. }
            | QueryError::UnknownConcept { at, .. } => Some(*at),
        }
    }
}

/// Parses a standalone condition expression.
pub fn parse_expr(text: &str) -> Result<Expr, QueryError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    match p.peek() {
        Some(t) => Err(p.unexpected(t, "end of expression")),
        None => Ok(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Word(&'a str),
    LParen,
    RParen,
    Sep,
}

struct Parser<'a> {
    toks: Vec<(Tok<'a>, Position)>,
    pos: usize,
    end: Position,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, QueryError> {
        let mut toks = Vec::new();
        let mut line = 1;
        let mut line_start = 0;
        let mut iter = text.char_indices().peekable();
        let at = |offset: usize, line: usize, line_start: usize| Position {
            offset,
            line,
            column: text[line_start..offset].chars().count() + 1,
        };
        while let Some((i, ch)) = iter.next() {
            let p = at(i, line, line_start);
            match ch {
                '\n' => {
                    toks.push((Tok::Sep, p));
                    line += 1;
                    line_start = i + 1;
                }
                ';' => toks.push((Tok::Sep, p)),
                '(' => toks.push((Tok::LParen, p)),
                ')' => toks.push((Tok::RParen, p)),
                c if c.is_whitespace() => {}
                c if c.is_ascii_alphanumeric() || c == '_' => {
                    let mut end = i + c.len_utf8();
                    while let Some(&(j, d)) = iter.peek() {
                        if d.is_ascii_alphanumeric() || d == '_' {
                            end = j + d.len_utf8();
                            iter.next();
                        } else {
                            break;
                        }
                    }
                    toks.push((Tok::Word(&text[i..end]), p));
                }
                other => {
                    return Err(QueryError::Syntax {
                        message: format!("unexpected character {other:?}"),
                        at: p,
                    })
                }
            }
        }
        let end = at(text.len(), line, line_start);
        Ok(Self { toks, pos: 0, end })
    }

    fn peek(&self) -> Option<(Tok<'a>, Position)> {
        self.toks.get(self.pos).cloned()
    }

    fn bump(&mut self) -> Option<(Tok<'a>, Position)> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn unexpected(&self, (tok, at): (Tok<'a>, Position), wanted: &str) -> QueryError {
        let found = match tok {
            Tok::Word(w) => format!("`{w}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Sep => "end of statement".into(),
        };
        QueryError::Syntax {
            message: format!("expected {wanted}, found {found}"),
            at,
        }
    }

    fn eof(&self, wanted: &str) -> QueryError {
        QueryError::Syntax {
            message: format!("expected {wanted}, found end of input"),
            at: self.end,
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some((Tok::Sep, _))) {
            self.pos += 1;
        }
    }

    fn query(&mut self) -> Result<FoilQuery, QueryError> {
        let mut rules = Vec::new();
        self.skip_separators();
        while self.peek().is_some() {
            rules.push(self.rule()?);
            match self.peek() {
                None => {}
                Some((Tok::Sep, _)) => self.skip_separators(),
                Some(t) => return Err(self.unexpected(t, "`;`, `until` or `while`")),
            }
        }
        FoilQuery::new(rules)
    }

    fn rule(&mut self) -> Result<FoilRule, QueryError> {
        match self.bump() {
            Some((Tok::Word("do"), _)) => {}
            Some(t) => return Err(self.unexpected(t, "`do`")),
            None => return Err(self.eof("`do`")),
        }
        let action = match self.bump() {
            Some((Tok::Word(w), at)) => Action::parse(w).ok_or_else(|| {
                QueryError::UnknownAction {
                    name: w.to_string(),
                    at,
                }
            })?,
            Some(t) => return Err(self.unexpected(t, "an action")),
            None => return Err(self.eof("an action")),
        };
        let condition = match self.peek() {
            Some((Tok::Word("until"), _)) => {
                self.pos += 1;
                Some(Condition::Until(self.expr()?))
            }
            Some((Tok::Word("while"), _)) => {
                self.pos += 1;
                Some(Condition::While(self.expr()?))
            }
            _ => None,
        };
        Ok(FoilRule { action, condition })
    }

    fn expr(&mut self) -> Result<Expr, QueryError> {
        let mut lhs = self.conjunction()?;
        while matches!(self.peek(), Some((Tok::Word("or"), _))) {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.conjunction()?));
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Expr, QueryError> {
        let mut lhs = self.unary()?;
        while matches!(self.peek(), Some((Tok::Word("and"), _))) {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, QueryError> {
        match self.bump() {
            Some((Tok::Word("not"), _)) => Ok(Expr::Not(Box::new(self.unary()?))),
            Some((Tok::LParen, _)) => {
                let e = self.expr()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(e),
                    Some(t) => Err(self.unexpected(t, "`)`")),
                    None => Err(self.eof("`)`")),
                }
            }
            Some((Tok::Word(w), at)) if !is_keyword(w) => Concept::parse(w)
                .map(Expr::Concept)
                .ok_or_else(|| QueryError::UnknownConcept {
                    name: w.to_string(),
                    at,
                }),
            Some(t) => Err(self.unexpected(t, "a concept name")),
            None => Err(self.eof("a concept name")),
        }
    }
}

fn is_keyword(w: &str) -> bool {
    matches!(w, "do" | "until" | "while" | "and" | "or" | "not")
}

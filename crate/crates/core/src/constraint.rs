//! The constraint language attached to each planned step.
//!
//! Four predicates, each with exactly one canonical sentence:
//!
//! | predicate            | canonical text                          |
//! |----------------------|-----------------------------------------|
//! | `Holding(x)`         | `the robot is holding <x>`              |
//! | `On(a, b)`           | `the <a> is on the <b>`                 |
//! | `ClearAhead`         | `no obstacle in front of the robot`     |
//! | `At(p)`              | `the robot is at <p>`                   |
//!
//! The parser also accepts the looser phrasings a language model tends to
//! produce ("robot holds box", "red block on green block", "no obstacles in
//! front of the robot", "no obstacle in the front"), case-insensitively and
//! with an optional trailing period. The full grammar is in `docs/grammar.md`.

use crate::entity::Entity;
use crate::world::{EvalError, WorldState};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredicateKind {
    Holding,
    On,
    ClearAhead,
    At,
}

impl PredicateKind {
    pub const ALL: [PredicateKind; 4] = [
        PredicateKind::Holding,
        PredicateKind::On,
        PredicateKind::ClearAhead,
        PredicateKind::At,
    ];

    /// The grammar production shown in parse errors.
    pub fn production(self) -> &'static str {
        match self {
            PredicateKind::Holding => "holding = \"the robot is holding \" entity",
            PredicateKind::On => "on = \"the \" entity \" is on the \" entity",
            PredicateKind::ClearAhead => "clear_ahead = \"no obstacle in front of the robot\"",
            PredicateKind::At => "at = \"the robot is at \" entity",
        }
    }

    fn keywords(self) -> &'static [&'static str] {
        match self {
            PredicateKind::Holding => &["robot", "holding", "holds", "hold"],
            PredicateKind::On => &["is", "on", "block"],
            PredicateKind::ClearAhead => &["no", "obstacle", "obstacles", "front", "ahead", "clear"],
            PredicateKind::At => &["robot", "at", "is"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constraint {
    Holding(Entity),
    On(Entity, Entity),
    ClearAhead,
    At(Entity),
}

impl Constraint {
    pub fn kind(&self) -> PredicateKind {
        match self {
            Constraint::Holding(_) => PredicateKind::Holding,
            Constraint::On(..) => PredicateKind::On,
            Constraint::ClearAhead => PredicateKind::ClearAhead,
            Constraint::At(_) => PredicateKind::At,
        }
    }

    /// Canonical sentence.
    pub fn text(&self) -> String {
        match self {
            Constraint::Holding(x) => format!("the robot is holding {}", x.noun()),
            Constraint::On(a, b) => format!("the {} is on the {}", a.noun(), b.noun()),
            Constraint::ClearAhead => "no obstacle in front of the robot".to_string(),
            Constraint::At(p) => format!("the robot is at {}", p.noun()),
        }
    }

    /// Sentence stating the constraint does not hold; used in detector feedback.
    pub fn negated_text(&self) -> String {
        match self {
            Constraint::Holding(x) => format!("the robot is not holding {}", x.noun()),
            Constraint::On(a, b) => format!("the {} is not on the {}", a.noun(), b.noun()),
            Constraint::ClearAhead => "there is an obstacle in front of the robot".to_string(),
            Constraint::At(p) => format!("the robot is not at {}", p.noun()),
        }
    }

    /// Entities the constraint mentions.
    pub fn entities(&self) -> Vec<&Entity> {
        match self {
            Constraint::Holding(x) | Constraint::At(x) => vec![x],
            Constraint::On(a, b) => vec![a, b],
            Constraint::ClearAhead => vec![],
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Detector query for one constraint.
///
/// The template is `Question: Is the <constraint> satisfied? Answer:`; a
/// leading article of the canonical sentence is folded into the template's
/// own "the".
pub fn render_question(c: &Constraint) -> String {
    let text = c.text();
    let body = text.strip_prefix("the ").unwrap_or(&text);
    format!("Question: Is the {body} satisfied? Answer:")
}

/// Pure ground-truth evaluation; delegates to the world.
pub fn eval_constraint(c: &Constraint, world: &WorldState) -> Result<bool, EvalError> {
    world.evaluate_predicate(c)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty constraint text")]
    Empty,
    #[error("`{text}` is not in the constraint grammar; nearest production: {nearest}")]
    NotInGrammar { text: String, nearest: &'static str },
    #[error("bad entity `{0}` in constraint")]
    BadEntity(String),
}

struct Patterns {
    holding: Regex,
    on: Regex,
    clear: Regex,
    at: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        holding: Regex::new(r"^(?:the )?robot (?:is holding|holds|is holding the|holds the) (.+)$").unwrap(),
        on: Regex::new(r"^(?:the )?(.+?) (?:is on|on|is on top of) (?:the )?(.+)$").unwrap(),
        clear: Regex::new(
            r"^(?:there is )?no obstacles? (?:is )?(?:in (?:the )?front(?: of (?:the )?robot)?|ahead(?: of (?:the )?robot)?)$",
        )
        .unwrap(),
        at: Regex::new(r"^(?:the )?robot (?:is at|is in|at) (.+)$").unwrap(),
    })
}

fn normalise(text: &str) -> String {
    let lower = text.trim().trim_end_matches('.').trim().to_lowercase();
    lower.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn entity(text: &str) -> Result<Entity, ParseError> {
    let t = text.trim();
    // item names keep their case-insensitive form but tables are written "table A"
    let fixed = match t.strip_prefix("table ") {
        Some(rest) if rest.len() == 1 => format!("table {}", rest.to_uppercase()),
        _ => t.to_string(),
    };
    Entity::parse_noun(&fixed).ok_or_else(|| ParseError::BadEntity(t.to_string()))
}

/// Parses canonical text (or an accepted alias) into a constraint.
pub fn parse_constraint(text: &str) -> Result<Constraint, ParseError> {
    let t = normalise(text);
    if t.is_empty() {
        return Err(ParseError::Empty);
    }
    let p = patterns();
    if p.clear.is_match(&t) {
        return Ok(Constraint::ClearAhead);
    }
    if let Some(c) = p.holding.captures(&t) {
        return Ok(Constraint::Holding(entity(&c[1])?));
    }
    if let Some(c) = p.at.captures(&t) {
        return Ok(Constraint::At(entity(&c[1])?));
    }
    if let Some(c) = p.on.captures(&t) {
        if c[1].trim() != "robot" {
            return Ok(Constraint::On(entity(&c[1])?, entity(&c[2])?));
        }
    }
    Err(ParseError::NotInGrammar {
        nearest: nearest_production(&t),
        text: text.to_string(),
    })
}

/// Inverse of [`Constraint::negated_text`].
pub fn parse_negated(text: &str) -> Result<Constraint, ParseError> {
    let t = normalise(text);
    if t.is_empty() {
        return Err(ParseError::Empty);
    }
    if t == "there is an obstacle in front of the robot" {
        return Ok(Constraint::ClearAhead);
    }
    let positive = if let Some(rest) = t.strip_prefix("the robot is not ") {
        format!("the robot is {rest}")
    } else if let Some((a, b)) = t.split_once(" is not on ") {
        format!("{a} is on {b}")
    } else {
        return Err(ParseError::NotInGrammar {
            nearest: nearest_production(&t),
            text: text.to_string(),
        });
    };
    parse_constraint(&positive)
}

fn nearest_production(t: &str) -> &'static str {
    let words: Vec<&str> = t.split_whitespace().collect();
    PredicateKind::ALL
        .iter()
        .map(|k| {
            let score = k.keywords().iter().filter(|kw| words.contains(kw)).count();
            (score, *k)
        })
        // stable: ties go to the earlier production
        .fold((0usize, PredicateKind::Holding), |best, cur| if cur.0 > best.0 { cur } else { best })
        .1
        .production()
}

/// Ordered, duplicate-free list of constraints attached to one step.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet(Vec<Constraint>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("duplicate constraint `{0}`")]
pub struct DuplicateConstraint(pub String);

impl ConstraintSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn try_from_vec(items: Vec<Constraint>) -> Result<Self, DuplicateConstraint> {
        let mut set = Self::new();
        for c in items {
            if set.contains(&c) {
                return Err(DuplicateConstraint(c.text()));
            }
            set.0.push(c);
        }
        Ok(set)
    }

    /// Appends unless already present.
    pub fn push(&mut self, c: Constraint) {
        if !self.contains(&c) {
            self.0.push(c);
        }
    }

    pub fn contains(&self, c: &Constraint) -> bool {
        self.0.contains(c)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Constraint] {
        &self.0
    }

    /// Canonical sentences joined with `", "`.
    pub fn joined(&self) -> String {
        self.0.iter().map(Constraint::text).collect::<Vec<_>>().join(", ")
    }
}

impl<'a> IntoIterator for &'a ConstraintSet {
    type Item = &'a Constraint;
    type IntoIter = std::slice::Iter<'a, Constraint>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn red() -> Entity {
        Entity::block("red")
    }
    fn brown() -> Entity {
        Entity::block("brown")
    }

    #[test]
    fn question_template() {
        assert_eq!(
            render_question(&Constraint::On(red(), brown())),
            "Question: Is the red block is on the brown block satisfied? Answer:"
        );
        assert_eq!(
            render_question(&Constraint::ClearAhead),
            "Question: Is the no obstacle in front of the robot satisfied? Answer:"
        );
    }

    #[test]
    fn canonical_texts() {
        assert_eq!(Constraint::Holding(Entity::item("box")).text(), "the robot is holding box");
        assert_eq!(Constraint::ClearAhead.text(), "no obstacle in front of the robot");
        assert_eq!(Constraint::On(red(), brown()).text(), "the red block is on the brown block");
        assert_eq!(Constraint::At(Entity::item("table B")).text(), "the robot is at table B");
        assert_eq!(
            Constraint::On(red(), brown()).negated_text(),
            "the red block is not on the brown block"
        );
    }

    #[test]
    fn parses_canonical_and_aliases() {
        assert_eq!(parse_constraint("the robot is holding red block"), Ok(Constraint::Holding(red())));
        assert_eq!(parse_constraint("The robot is holding red block"), Ok(Constraint::Holding(red())));
        assert_eq!(
            parse_constraint("the green block is on the red block"),
            Ok(Constraint::On(Entity::block("green"), red()))
        );
        assert_eq!(
            parse_constraint("The green block is on the red block."),
            Ok(Constraint::On(Entity::block("green"), red()))
        );
        assert_eq!(parse_constraint("robot holds box"), Ok(Constraint::Holding(Entity::item("box"))));
        assert_eq!(
            parse_constraint("red block on green block"),
            Ok(Constraint::On(red(), Entity::block("green")))
        );
        assert_eq!(parse_constraint("no obstacle in the front"), Ok(Constraint::ClearAhead));
        assert_eq!(parse_constraint("no obstacles in front of the robot"), Ok(Constraint::ClearAhead));
        assert_eq!(
            parse_constraint("the robot is at table B"),
            Ok(Constraint::At(Entity::item("table B")))
        );
    }

    #[test]
    fn rejects_text_outside_grammar() {
        match parse_constraint("the robot flies") {
            Err(ParseError::NotInGrammar { nearest, .. }) => {
                assert!(nearest.starts_with("holding"), "{nearest}");
            }
            other => panic!("expected grammar error, got {other:?}"),
        }
        assert_eq!(parse_constraint("  "), Err(ParseError::Empty));
        assert!(parse_constraint("the robot is on the table").is_err());
    }

    #[test]
    fn negated_round_trip() {
        for c in [
            Constraint::Holding(red()),
            Constraint::On(red(), brown()),
            Constraint::ClearAhead,
            Constraint::At(Entity::item("table B")),
        ] {
            assert_eq!(parse_negated(&c.negated_text()), Ok(c));
        }
        assert!(parse_negated("the red block is fine").is_err());
    }

    #[test]
    fn set_rejects_duplicates_and_keeps_order() {
        let a = Constraint::Holding(red());
        let b = Constraint::On(red(), brown());
        assert!(ConstraintSet::try_from_vec(vec![a.clone(), a.clone()]).is_err());
        let set = ConstraintSet::try_from_vec(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(set.as_slice(), &[b, a]);
    }
}

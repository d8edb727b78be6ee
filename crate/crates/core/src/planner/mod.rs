//! The planning role: choose the next skill and the constraints that must
//! hold while it runs, from the instruction, the step history and detector
//! feedback.

mod scripted;

pub use scripted::{recovery_rule, ScriptedPlanner};

use crate::constraint::{parse_negated, Constraint, ConstraintSet};
use crate::geometry::{format_mm_as_m, parse_m_as_mm};
use crate::skills::Skill;
use crate::world::TaskSpec;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDecision {
    pub step: Skill,
    pub constraints: ConstraintSet,
    pub rationale: String,
}

impl PlanDecision {
    pub fn new(step: Skill, constraints: Vec<Constraint>, rationale: impl Into<String>) -> Self {
        let mut set = ConstraintSet::new();
        if !step.is_done() {
            for c in constraints {
                set.push(c);
            }
        }
        Self { step, constraints: set, rationale: rationale.into() }
    }

    pub fn done(rationale: impl Into<String>) -> Self {
        Self::new(Skill::Done, Vec::new(), rationale)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("no applicable rule: {0}")]
    NoApplicableRule(String),
    #[error("external planner: {0}")]
    External(String),
}

/// Violated constraints reported during (or at the end of) one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMsg {
    pub violated: Vec<Constraint>,
    pub at_tick: u64,
    pub during_step: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("feedback needs at least one violated constraint")]
    Empty,
    #[error("malformed feedback line `{0}`")]
    Malformed(String),
}

pub fn encode_feedback(violated: &[Constraint], at_tick: u64, step: &Skill) -> Result<FeedbackMsg, FeedbackError> {
    if violated.is_empty() {
        return Err(FeedbackError::Empty);
    }
    Ok(FeedbackMsg {
        violated: violated.to_vec(),
        at_tick,
        during_step: step.text(),
    })
}

impl FeedbackMsg {
    /// `[Detector feedback: the red block is not on the brown block]`
    pub fn line(&self) -> String {
        let parts: Vec<String> = self.violated.iter().map(Constraint::negated_text).collect();
        format!("[Detector feedback: {}]", parts.join(", "))
    }

    /// Parses a feedback line back into its violated constraints.
    pub fn parse_line(line: &str) -> Result<Vec<Constraint>, FeedbackError> {
        let body = line
            .trim()
            .strip_prefix("[Detector feedback:")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| FeedbackError::Malformed(line.to_string()))?;
        let out: Result<Vec<Constraint>, _> = body
            .split(", ")
            .map(|p| parse_negated(p).map_err(|_| FeedbackError::Malformed(line.to_string())))
            .collect();
        match out? {
            v if v.is_empty() => Err(FeedbackError::Empty),
            v => Ok(v),
        }
    }
}

/// How a step ended, as far as the executive tells the planner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Done,
    /// Stopped mid-way; walking skills report how far they got.
    Aborted { progress_mm: Option<u32> },
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: Skill,
    pub constraints: ConstraintSet,
    pub outcome: Outcome,
    pub feedback: Option<FeedbackMsg>,
}

impl HistoryEntry {
    /// Annotation string used in the wire protocol, e.g. `done`,
    /// `aborted after 6.777 m [Detector feedback: ...]`, `failed: not holding`.
    pub fn annotation(&self) -> String {
        let mut s = match &self.outcome {
            Outcome::Done => "done".to_string(),
            Outcome::Aborted { progress_mm: None } => "aborted".to_string(),
            Outcome::Aborted { progress_mm: Some(mm) } => format!("aborted after {} m", format_mm_as_m(*mm)),
            Outcome::Failed(r) => format!("failed: {r}"),
        };
        if let Some(f) = &self.feedback {
            s.push(' ');
            s.push_str(&f.line());
        }
        s
    }

    /// Inverse of [`HistoryEntry::annotation`]; feedback time is not carried.
    pub fn from_annotation(step: Skill, annotation: &str) -> Result<Self, FeedbackError> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"^(done|aborted(?: after ([0-9.]+) m)?|failed: (.*?))(?: (\[Detector feedback: .*\]))?$").unwrap()
        });
        let c = re
            .captures(annotation.trim())
            .ok_or_else(|| FeedbackError::Malformed(annotation.to_string()))?;
        let outcome = if &c[1] == "done" {
            Outcome::Done
        } else if let Some(r) = c.get(3) {
            Outcome::Failed(r.as_str().to_string())
        } else {
            Outcome::Aborted { progress_mm: c.get(2).and_then(|m| parse_m_as_mm(m.as_str())) }
        };
        let feedback = match c.get(4) {
            Some(line) => Some(FeedbackMsg {
                violated: FeedbackMsg::parse_line(line.as_str())?,
                at_tick: 0,
                during_step: step.text(),
            }),
            None => None,
        };
        Ok(Self { step, constraints: ConstraintSet::new(), outcome, feedback })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptState {
    pub instruction: String,
    pub history: Vec<HistoryEntry>,
    /// Feedback about the latest step not yet seen by the planner.
    pub feedback: Option<FeedbackMsg>,
}

impl PromptState {
    pub fn new(instruction: &str) -> Self {
        Self { instruction: instruction.to_string(), history: Vec::new(), feedback: None }
    }

    /// History with pending feedback folded into the latest entry.
    pub fn effective_history(&self) -> Vec<HistoryEntry> {
        let mut h = self.history.clone();
        if let (Some(f), Some(last)) = (&self.feedback, h.last_mut()) {
            last.feedback = Some(f.clone());
        }
        h
    }

    /// Moves pending feedback into the history once the planner has seen it.
    pub fn consume_feedback(&mut self) {
        if let Some(f) = self.feedback.take() {
            if let Some(last) = self.history.last_mut() {
                last.feedback = Some(f);
            }
        }
    }
}

const PREAMBLE: &str = "The robot performs manipulation tasks. At the same time, the robot needs to satisfy \
some constraints to ensure the successful execution of each task. Just fill in the blank and directly output \
the next step.";

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One numbered transcript line: `(3) Pick the green block, [Constraint: ...],`
pub fn render_step(index: usize, step: &Skill, constraints: &ConstraintSet) -> String {
    if constraints.is_empty() {
        format!("({index}) {step},")
    } else {
        format!("({index}) {step}, [Constraint: {}],", capitalise(&constraints.joined()))
    }
}

/// Prompt text in the bracketed transcript style, ending with the number of
/// the step to fill in.
pub fn render_prompt(prompt: &PromptState) -> String {
    let mut out = format!("{PREAMBLE} Task: {}\n", prompt.instruction);
    let history = prompt.effective_history();
    for (i, e) in history.iter().enumerate() {
        out.push_str(&render_step(i + 1, &e.step, &e.constraints));
        if let Some(f) = &e.feedback {
            out.push(' ');
            out.push_str(&f.line());
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str(&format!("({})", history.len() + 1));
    out
}

pub trait Planner {
    fn plan_next(&mut self, prompt: &PromptState, task: &TaskSpec) -> Result<PlanDecision, PlannerError>;

    fn name(&self) -> String;
}

impl fmt::Display for PlanDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.constraints.is_empty() {
            write!(f, "{}", self.step)
        } else {
            write!(f, "{}, [Constraint: {}]", self.step, capitalise(&self.constraints.joined()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::Entity;

    #[test]
    fn feedback_line() {
        let red = Entity::block("red");
        let brown = Entity::block("brown");
        let step = Skill::Place(Entity::block("green"), red.clone());
        let f = encode_feedback(&[Constraint::On(red.clone(), brown.clone())], 40, &step).unwrap();
        assert_eq!(f.line(), "[Detector feedback: the red block is not on the brown block]");
        assert_eq!(FeedbackMsg::parse_line(&f.line()).unwrap(), f.violated);
        assert_eq!(encode_feedback(&[], 0, &step), Err(FeedbackError::Empty));
    }

    #[test]
    fn annotations_round_trip() {
        let fb = FeedbackMsg {
            violated: vec![Constraint::ClearAhead, Constraint::Holding(Entity::item("box"))],
            at_tick: 0,
            during_step: "Go forward 10 meters".into(),
        };
        for (outcome, feedback) in [
            (Outcome::Done, None),
            (Outcome::Done, Some(fb.clone())),
            (Outcome::Aborted { progress_mm: None }, Some(fb.clone())),
            (Outcome::Aborted { progress_mm: Some(6_777) }, Some(fb.clone())),
            (Outcome::Failed("hand occupied by green block".into()), None),
        ] {
            let e = HistoryEntry {
                step: Skill::GoForward(10_000),
                constraints: ConstraintSet::new(),
                outcome,
                feedback,
            };
            let back = HistoryEntry::from_annotation(e.step.clone(), &e.annotation()).unwrap();
            assert_eq!(back.outcome, e.outcome, "{}", e.annotation());
            assert_eq!(back.feedback.map(|f| f.violated), e.feedback.map(|f| f.violated));
        }
        assert!(HistoryEntry::from_annotation(Skill::Done, "maybe").is_err());
    }
}

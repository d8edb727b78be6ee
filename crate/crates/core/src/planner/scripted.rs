//! Deterministic rule tables standing in for a language model.
//!
//! The planner keeps no state between calls: every decision re-derives a
//! belief by folding over the step history, then applies the family's rules
//! in priority order. Beliefs come only from step outcomes and detector
//! feedback, never from the simulator.
//!
//! Two belief conventions matter for recovery:
//! * after an aborted pick, place or put-down, the hand is assumed empty (a
//!   pick of something still held is a quick no-op for the controller);
//! * `On(a, b)` reported violated invalidates `a` and everything stacked above.

use super::{HistoryEntry, Outcome, PlanDecision, Planner, PlannerError, PromptState};
use crate::constraint::{Constraint, PredicateKind};
use crate::entity::Entity;
use crate::skills::{Direction, Skill};
use crate::world::{Goal, TaskSpec};
use std::collections::BTreeSet;

/// The scripted planner. Stateless; cheap to clone.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScriptedPlanner;

/// What the planner does when a constraint of `kind` is reported violated.
pub fn recovery_rule(kind: PredicateKind) -> &'static str {
    match kind {
        PredicateKind::Holding => "pick the object up again where it lies",
        PredicateKind::On => "pick and place the fallen object, then redo everything above it",
        PredicateKind::ClearAhead => "sidestep (back toward the centre once clear of the last obstacle), then go on",
        PredicateKind::At => "go to the place again",
    }
}

/// Walking distance after a sidestep beyond which the avoided obstacle is
/// assumed to be behind the robot.
const PASS_MM: u32 = 1_500;

#[derive(Debug, Default)]
struct Belief {
    held: Option<Entity>,
    location: Option<Entity>,
    picked_once: bool,
    /// Stack: how many blocks of the order are correctly in place (bottom counts).
    stacked: usize,
    delivered: BTreeSet<Entity>,
    travelled_mm: u32,
    last_turn: Option<Direction>,
    since_turn_mm: u32,
    blocked: bool,
}

fn occupied_by(reason: &str) -> Option<Entity> {
    reason.strip_prefix("hand occupied by ").and_then(Entity::parse_noun)
}

impl Belief {
    fn fold(history: &[HistoryEntry], goal: &Goal) -> Belief {
        let mut b = Belief { stacked: 1, ..Belief::default() };
        for e in history {
            b.blocked = false;
            match &e.outcome {
                Outcome::Done => b.apply_done(&e.step, goal),
                // the grip is kept through an abort; a reported Holding
                // violation clears the belief below
                Outcome::Aborted { progress_mm } => {
                    match e.step {
                        Skill::GoForward(_) => b.walked(progress_mm.unwrap_or(0)),
                        Skill::Turn(d) => b.turned(d),
                        Skill::GoTo(_) | Skill::MoveAtSpeed(_) => b.location = None,
                        _ => {}
                    }
                }
                Outcome::Failed(reason) => {
                    if let Some(x) = occupied_by(reason) {
                        b.held = Some(x);
                    }
                }
            }
            if let Some(f) = &e.feedback {
                for c in &f.violated {
                    b.apply_violation(c, goal);
                }
            }
        }
        b
    }

    fn apply_done(&mut self, step: &Skill, goal: &Goal) {
        match step {
            Skill::Pick(x) => {
                self.held = Some(x.clone());
                self.picked_once = true;
                self.location = None;
            }
            Skill::Place(x, y) => {
                self.held = None;
                match goal {
                    Goal::StackOrder(order) => {
                        if self.stacked < order.len() && order[self.stacked] == *x && order[self.stacked - 1] == *y {
                            self.stacked += 1;
                        }
                    }
                    _ => {
                        self.delivered.insert(x.clone());
                    }
                }
            }
            Skill::PutDown(x) => {
                self.held = None;
                if matches!(goal, Goal::Deliver { object, .. } if object == x) {
                    self.delivered.insert(x.clone());
                }
            }
            Skill::GoTo(p) => self.location = Some(p.clone()),
            Skill::GoForward(mm) => self.walked(*mm),
            Skill::Turn(d) => self.turned(*d),
            Skill::MoveAtSpeed(_) | Skill::Done => {}
        }
    }

    fn walked(&mut self, mm: u32) {
        self.travelled_mm += mm;
        self.since_turn_mm += mm;
    }

    fn turned(&mut self, d: Direction) {
        self.last_turn = Some(d);
        self.since_turn_mm = 0;
        self.location = None;
    }

    /// Sidestep direction: left first; keep going the same way while the
    /// obstacle just avoided may still be alongside, otherwise head back.
    fn next_turn(&self) -> Direction {
        match self.last_turn {
            None => Direction::Left,
            Some(d) if self.since_turn_mm < PASS_MM => d,
            Some(Direction::Left) => Direction::Right,
            Some(Direction::Right) => Direction::Left,
        }
    }

    fn apply_violation(&mut self, c: &Constraint, goal: &Goal) {
        match c {
            Constraint::Holding(x) => {
                if self.held.as_ref() == Some(x) {
                    self.held = None;
                }
            }
            Constraint::On(a, _) => {
                // only reported once `a` has been let go
                if self.held.as_ref() == Some(a) {
                    self.held = None;
                }
                self.unstack(a, goal);
            }
            Constraint::ClearAhead => self.blocked = true,
            Constraint::At(_) => self.location = None,
        }
    }

    fn unstack(&mut self, a: &Entity, goal: &Goal) {
        match goal {
            Goal::StackOrder(order) => {
                if let Some(i) = order.iter().position(|o| o == a) {
                    if i >= 1 {
                        self.stacked = self.stacked.min(i);
                    }
                }
            }
            _ => {
                self.delivered.remove(a);
            }
        }
    }
}

/// Gives up on a step that keeps failing without using any time.
fn stuck(history: &[HistoryEntry]) -> Option<String> {
    let n = history.len();
    if n < 3 {
        return None;
    }
    let tail = &history[n - 3..];
    match &tail[0].outcome {
        Outcome::Failed(r) if tail.iter().all(|e| e.step == tail[0].step && e.outcome == tail[0].outcome) => {
            Some(format!("`{}` keeps failing ({r})", tail[0].step))
        }
        _ => None,
    }
}

impl Planner for ScriptedPlanner {
    fn plan_next(&mut self, prompt: &PromptState, task: &TaskSpec) -> Result<PlanDecision, PlannerError> {
        plan(prompt, task)
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

impl ScriptedPlanner {
    pub fn plan(&self, prompt: &PromptState, task: &TaskSpec) -> Result<PlanDecision, PlannerError> {
        plan(prompt, task)
    }
}

fn plan(prompt: &PromptState, task: &TaskSpec) -> Result<PlanDecision, PlannerError> {
    let history = prompt.effective_history();
    if let Some(why) = stuck(&history) {
        return Err(PlannerError::NoApplicableRule(why));
    }
    let b = Belief::fold(&history, &task.goal);

    // something unexpected in hand: put it down first
    if let Some(h) = &b.held {
        let wanted = match &task.goal {
            Goal::OnFixture { block, .. } => h == block,
            Goal::StackOrder(order) => order.get(b.stacked) == Some(h),
            Goal::Deliver { object, .. } => h == object,
            Goal::FoodsIn { foods, .. } => foods.contains(h) && !b.delivered.contains(h),
            Goal::PassFinish { .. } => false,
        };
        if !wanted {
            return Ok(PlanDecision::new(Skill::PutDown(h.clone()), vec![], format!("free the hand of the {}", h.noun())));
        }
    }

    Ok(match &task.goal {
        Goal::OnFixture { block, fixture } => {
            if b.delivered.contains(block) {
                PlanDecision::done("the block is on the fixture")
            } else if b.held.as_ref() == Some(block) {
                PlanDecision::new(
                    Skill::Place(block.clone(), fixture.clone()),
                    vec![Constraint::Holding(block.clone()), Constraint::On(block.clone(), fixture.clone())],
                    "place the block",
                )
            } else {
                PlanDecision::new(Skill::Pick(block.clone()), vec![Constraint::Holding(block.clone())], "pick the block")
            }
        }
        Goal::StackOrder(order) => {
            if b.stacked >= order.len() {
                return Ok(PlanDecision::done("all blocks stacked"));
            }
            let target = &order[b.stacked];
            let below = &order[b.stacked - 1];
            let carried: Vec<Constraint> =
                (1..b.stacked).map(|i| Constraint::On(order[i].clone(), order[i - 1].clone())).collect();
            if b.held.as_ref() == Some(target) {
                let mut cs = carried;
                cs.push(Constraint::On(target.clone(), below.clone()));
                PlanDecision::new(Skill::Place(target.clone(), below.clone()), cs, format!("stack level {}", b.stacked))
            } else {
                let mut cs = vec![Constraint::Holding(target.clone())];
                cs.extend(carried);
                PlanDecision::new(Skill::Pick(target.clone()), cs, format!("next block for level {}", b.stacked))
            }
        }
        Goal::PassFinish { distance_mm } => {
            if b.blocked {
                PlanDecision::new(Skill::Turn(b.next_turn()), vec![], "obstacle ahead")
            } else if b.travelled_mm >= *distance_mm {
                PlanDecision::done("finish line reached")
            } else {
                PlanDecision::new(
                    Skill::GoForward(distance_mm - b.travelled_mm),
                    vec![Constraint::ClearAhead],
                    "walk the remaining distance",
                )
            }
        }
        Goal::Deliver { object, from, to } => {
            if b.delivered.contains(object) {
                PlanDecision::done("the box is delivered")
            } else if b.held.as_ref() == Some(object) {
                let keep = vec![Constraint::Holding(object.clone())];
                if b.location.as_ref() == Some(to) {
                    PlanDecision::new(Skill::PutDown(object.clone()), keep, "put the box down")
                } else {
                    PlanDecision::new(
                        Skill::GoTo(to.clone()),
                        vec![Constraint::Holding(object.clone()), Constraint::At(to.clone())],
                        "carry the box",
                    )
                }
            } else if !b.picked_once && b.location.as_ref() != Some(from) {
                PlanDecision::new(Skill::GoTo(from.clone()), vec![Constraint::At(from.clone())], "walk to the box")
            } else {
                PlanDecision::new(Skill::Pick(object.clone()), vec![Constraint::Holding(object.clone())], "pick the box")
            }
        }
        Goal::FoodsIn { foods, basket } => {
            let current = b.held.clone().filter(|h| foods.contains(h));
            match current.or_else(|| foods.iter().find(|f| !b.delivered.contains(*f)).cloned()) {
                None => PlanDecision::done("all foods are in the basket"),
                Some(f) if b.held.as_ref() == Some(&f) => {
                    if b.location.as_ref() == Some(basket) {
                        PlanDecision::new(
                            Skill::Place(f.clone(), basket.clone()),
                            vec![Constraint::Holding(f.clone()), Constraint::On(f.clone(), basket.clone())],
                            "put the food in the basket",
                        )
                    } else {
                        PlanDecision::new(
                            Skill::GoTo(basket.clone()),
                            vec![Constraint::Holding(f.clone()), Constraint::At(basket.clone())],
                            "carry the food",
                        )
                    }
                }
                Some(f) => PlanDecision::new(Skill::Pick(f.clone()), vec![Constraint::Holding(f.clone())], "fetch the next food"),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::constraint::ConstraintSet;
    use crate::planner::FeedbackMsg;

    fn entry(d: &PlanDecision, outcome: Outcome) -> HistoryEntry {
        HistoryEntry { step: d.step.clone(), constraints: d.constraints.clone(), outcome, feedback: None }
    }

    #[test]
    fn stack_plan_follows_the_transcript_pattern() {
        let cfg = SimConfig::default();
        let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
        let mut p = PromptState::new(&task.instruction);
        let mut lines = Vec::new();
        loop {
            let d = plan(&p, &task).unwrap();
            if d.step.is_done() {
                break;
            }
            lines.push(d.to_string());
            p.history.push(entry(&d, Outcome::Done));
        }
        assert_eq!(
            lines,
            [
                "Pick the red block, [Constraint: The robot is holding red block]",
                "Place the red block on the brown block, [Constraint: The red block is on the brown block]",
                "Pick the green block, [Constraint: The robot is holding green block, the red block is on the brown block]",
                "Place the green block on the red block, [Constraint: The red block is on the brown block, the green block is on the red block]",
            ]
        );
    }

    #[test]
    fn toppled_base_is_rebuilt() {
        let cfg = SimConfig::default();
        let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
        let mut p = PromptState::new(&task.instruction);
        for _ in 0..3 {
            let d = plan(&p, &task).unwrap();
            p.history.push(entry(&d, Outcome::Done));
        }
        let d = plan(&p, &task).unwrap();
        p.history.push(entry(&d, Outcome::Aborted { progress_mm: None }));
        let red_on_brown = Constraint::On(Entity::block("red"), Entity::block("brown"));
        p.feedback = Some(FeedbackMsg { violated: vec![red_on_brown], at_tick: 0, during_step: d.step.text() });
        // green is still in hand
        let d = plan(&p, &task).unwrap();
        assert_eq!(d.step, Skill::PutDown(Entity::block("green")));
        p.consume_feedback();
        p.history.push(entry(&d, Outcome::Done));
        assert_eq!(plan(&p, &task).unwrap().step, Skill::Pick(Entity::block("red")));
    }

    #[test]
    fn occupied_hand_is_emptied_first() {
        let cfg = SimConfig::default();
        let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
        let mut p = PromptState::new(&task.instruction);
        p.history.push(HistoryEntry {
            step: Skill::Pick(Entity::block("red")),
            constraints: ConstraintSet::new(),
            outcome: Outcome::Failed("hand occupied by green block".into()),
            feedback: None,
        });
        assert_eq!(plan(&p, &task).unwrap().step, Skill::PutDown(Entity::block("green")));
    }

    #[test]
    fn obstacle_sidesteps_and_resumes_remaining_distance() {
        let cfg = SimConfig::default();
        let task = TaskSpec::obstacle_avoid(0.3, &cfg);
        let mut p = PromptState::new(&task.instruction);
        let blocked = |step: &Skill| FeedbackMsg { violated: vec![Constraint::ClearAhead], at_tick: 0, during_step: step.text() };
        let d = plan(&p, &task).unwrap();
        assert_eq!(d.step, Skill::GoForward(10_000));
        p.history.push(HistoryEntry { feedback: Some(blocked(&d.step)), ..entry(&d, Outcome::Aborted { progress_mm: Some(3_000) }) });
        let d = plan(&p, &task).unwrap();
        assert_eq!(d.step, Skill::Turn(Direction::Left));
        assert!(d.constraints.is_empty());
        p.history.push(entry(&d, Outcome::Done));
        let d = plan(&p, &task).unwrap();
        assert_eq!(d.step, Skill::GoForward(7_000));
        // still alongside the first obstacle: keep clear of it
        let mut near = p.clone();
        near.history.push(HistoryEntry { feedback: Some(blocked(&d.step)), ..entry(&d, Outcome::Aborted { progress_mm: Some(900) }) });
        assert_eq!(plan(&near, &task).unwrap().step, Skill::Turn(Direction::Left));
        p.history.push(HistoryEntry { feedback: Some(blocked(&d.step)), ..entry(&d, Outcome::Aborted { progress_mm: Some(2_500) }) });
        assert_eq!(plan(&p, &task).unwrap().step, Skill::Turn(Direction::Right));
    }

    #[test]
    fn move_box_recovers_a_dropped_box() {
        let cfg = SimConfig::default();
        let task = TaskSpec::move_box(0.04, &cfg);
        let bx = Entity::item("box");
        let mut p = PromptState::new(&task.instruction);
        let mut steps = Vec::new();
        for _ in 0..2 {
            let d = plan(&p, &task).unwrap();
            steps.push(d.step.clone());
            p.history.push(entry(&d, Outcome::Done));
        }
        let d = plan(&p, &task).unwrap();
        assert_eq!(d.step, Skill::GoTo(Entity::item("table B")));
        p.history.push(entry(&d, Outcome::Aborted { progress_mm: None }));
        p.feedback = Some(FeedbackMsg { violated: vec![Constraint::Holding(bx.clone())], at_tick: 0, during_step: String::new() });
        assert_eq!(plan(&p, &task).unwrap().step, Skill::Pick(bx));
        assert_eq!(steps[0], Skill::GoTo(Entity::item("table A")));
    }

    #[test]
    fn every_predicate_kind_has_a_recovery() {
        for k in PredicateKind::ALL {
            assert!(!recovery_rule(k).is_empty());
        }
    }

    #[test]
    fn repeated_zero_time_failures_end_in_an_error() {
        let cfg = SimConfig::default();
        let task = TaskSpec::pick_place(0.0, &cfg);
        let mut p = PromptState::new(&task.instruction);
        for _ in 0..3 {
            p.history.push(HistoryEntry {
                step: Skill::Pick(Entity::block("red")),
                constraints: ConstraintSet::new(),
                outcome: Outcome::Failed("unknown target".into()),
                feedback: None,
            });
        }
        assert!(matches!(plan(&p, &task), Err(PlannerError::NoApplicableRule(_))));
    }
}

//! Closed-loop execution engines.
//!
//! One tick of an episode runs, in order: the skill controller, the world
//! (motion, grip, disturbances), detector checks (when the clock is a
//! positive multiple of the check period and the skill is still running),
//! then termination. Step-end feedback for the baselines is handled after
//! termination, so an episode that ends on a tick never sees that tick's
//! end-of-step query.
//!
//! Constraint activity within a step:
//! * the step's own effect (`Holding(x)` for a pick, `On(x, y)` for a place,
//!   `At(p)` for a go-to) becomes active when the controller completes the
//!   grasp / release / arrival, and an `Armed` event is logged;
//! * `Holding(x)` during a place or put-down of `x` stays active until release;
//! * every other constraint is active from the first tick.

use crate::config::SimConfig;
use crate::constraint::Constraint;
use crate::detector::{check_all, CheckRecord, Confirmation, DetectorModel};
use crate::planner::{encode_feedback, HistoryEntry, Outcome, PlanDecision, Planner, PromptState};
use crate::rng::Stream;
use crate::skills::{skill_step, start_skill, Skill, SkillExecution, SkillStatus};
use crate::world::{new_world, EvalError, Family, Injection, TaskSpec, WorldState};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Trace format version written into every header.
pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    SayCan,
    RepeatUntilSuccess,
    InnerMonologue,
    IMOracle,
    DoReMi,
}

impl PolicyKind {
    pub fn uses_periodic_checks(self) -> bool {
        self == PolicyKind::DoReMi
    }
}

/// A named executive configuration, e.g. `doremi-ft`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutivePolicy {
    pub label: String,
    pub kind: PolicyKind,
    pub detector: DetectorModel,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("configuration: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("unknown policy `{0}` (expected saycan, repeat, im, im-oracle, doremi or doremi-ft)")]
    UnknownPolicy(String),
}

impl ExecutivePolicy {
    pub const LABELS: [&'static str; 6] = ["saycan", "repeat", "im", "im-oracle", "doremi", "doremi-ft"];

    /// Default detector per policy and family: the arm tasks have no measured
    /// detector accuracy and use exact answers; the walking tasks use the
    /// measured rates (before fine-tuning, or after for `doremi-ft`).
    pub fn named(label: &str, family: Family, cfg: &SimConfig) -> Result<Self, ExecError> {
        let (kind, detector) = match label {
            "saycan" => (PolicyKind::SayCan, DetectorModel::oracle(cfg)),
            "repeat" => (PolicyKind::RepeatUntilSuccess, DetectorModel::preset(family, false, cfg)),
            "im" => (PolicyKind::InnerMonologue, DetectorModel::preset(family, false, cfg)),
            "im-oracle" => (PolicyKind::IMOracle, DetectorModel::oracle(cfg)),
            "doremi" => (PolicyKind::DoReMi, DetectorModel::preset(family, false, cfg)),
            "doremi-ft" => (PolicyKind::DoReMi, DetectorModel::preset(family, true, cfg)),
            other => return Err(ExecError::UnknownPolicy(other.to_string())),
        };
        Ok(Self { label: label.to_string(), kind, detector })
    }

    pub fn with_detector(mut self, detector: DetectorModel) -> Self {
        self.detector = detector;
        self
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        self.detector.validate()?;
        if self.kind == PolicyKind::IMOracle && !self.detector.is_oracle() {
            return Err(ExecError::Config(crate::config::ConfigError::Invalid {
                key: self.label.clone(),
                reason: "IM-Oracle needs exact answers".into(),
            }));
        }
        Ok(())
    }
}

impl FromStr for PolicyKind {
    type Err = ExecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "saycan" => PolicyKind::SayCan,
            "repeat" => PolicyKind::RepeatUntilSuccess,
            "im" => PolicyKind::InnerMonologue,
            "im-oracle" => PolicyKind::IMOracle,
            "doremi" | "doremi-ft" => PolicyKind::DoReMi,
            other => return Err(ExecError::UnknownPolicy(other.to_string())),
        })
    }
}

/// One trace event. Payloads are canonical text so traces diff cleanly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    /// Step text followed by its constraints.
    Plan { step: String, constraints: Vec<String> },
    SkillStart { step: String },
    Check { constraint: String, truth: bool, reported: bool },
    Armed { constraint: String },
    Violation { constraints: Vec<String> },
    Abort { step: String },
    SkillEnd { step: String, status: String },
    Disturbance { what: String },
    Timeout,
    Success,
    Failure { reason: String },
}

impl Event {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Event::Plan { .. } => "Plan",
            Event::SkillStart { .. } => "SkillStart",
            Event::Check { .. } => "Check",
            Event::Armed { .. } => "Armed",
            Event::Violation { .. } => "Violation",
            Event::Abort { .. } => "Abort",
            Event::SkillEnd { .. } => "SkillEnd",
            Event::Disturbance { .. } => "Disturbance",
            Event::Timeout => "Timeout",
            Event::Success => "Success",
            Event::Failure { .. } => "Failure",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Event::Success | Event::Failure { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub task: TaskSpec,
    pub seed: u64,
    pub policy: ExecutivePolicy,
    pub injections: Vec<Injection>,
    pub config_digest: String,
    pub ticks_per_second: u32,
    pub config: SimConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    Success,
    Failure(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub outcome: EpisodeOutcome,
    pub duration_ticks: u64,
    pub replan_count: u32,
    pub check_count: u32,
}

impl EpisodeTrace {
    pub fn success(&self) -> bool {
        self.outcome == EpisodeOutcome::Success
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ticks as f64 / f64::from(self.header.ticks_per_second)
    }

    /// Steps started, in order.
    pub fn steps(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match &e.event {
                Event::SkillStart { step } => Some(step.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.events.iter().filter(|e| e.event.kind_name() == kind).count()
    }
}

impl fmt::Display for EpisodeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpisodeOutcome::Success => f.write_str("success"),
            EpisodeOutcome::Failure(r) => write!(f, "failure ({r})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("external detector: {0}")]
    External(String),
}

/// Answers constraint queries. The executive decides when to ask.
pub trait Detector {
    fn check(
        &mut self,
        model: &DetectorModel,
        constraints: &[Constraint],
        world: &WorldState,
    ) -> Result<Vec<CheckRecord>, DetectorError>;
}

/// Rates-based detector drawing from the episode's `"detector"` stream.
#[derive(Clone, Debug)]
pub struct ModelDetector {
    rng: Stream,
}

impl ModelDetector {
    pub fn new(episode_seed: u64) -> Self {
        Self { rng: Stream::new(episode_seed, "detector") }
    }
}

impl Detector for ModelDetector {
    fn check(
        &mut self,
        model: &DetectorModel,
        constraints: &[Constraint],
        world: &WorldState,
    ) -> Result<Vec<CheckRecord>, DetectorError> {
        Ok(check_all(model, constraints, world, &mut self.rng)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activity {
    Effect,
    Consumed,
    Carried,
}

fn activity(c: &Constraint, step: &Skill) -> Activity {
    match (step, c) {
        (Skill::Pick(x), Constraint::Holding(h)) if x == h => Activity::Effect,
        (Skill::Place(x, y), Constraint::On(a, b)) if x == a && y == b => Activity::Effect,
        (Skill::Place(x, _) | Skill::PutDown(x), Constraint::Holding(h)) if x == h => Activity::Consumed,
        (Skill::GoTo(p), Constraint::At(q)) if p == q => Activity::Effect,
        _ => Activity::Carried,
    }
}

fn effect_done(exec: &SkillExecution) -> bool {
    match exec.skill {
        Skill::Pick(_) => exec.attached,
        Skill::Place(..) | Skill::PutDown(_) => exec.released,
        Skill::GoTo(_) => exec.arrived,
        _ => false,
    }
}

/// Constraints of `decision` that currently apply.
pub fn active_constraints(decision: &PlanDecision, exec: &SkillExecution) -> Vec<Constraint> {
    let done = effect_done(exec);
    decision
        .constraints
        .iter()
        .filter(|c| match activity(c, &decision.step) {
            Activity::Effect => done,
            Activity::Consumed => !done,
            Activity::Carried => true,
        })
        .cloned()
        .collect()
}

/// The single fact a repeat-until-success executive checks after a step.
pub fn postcondition(step: &Skill) -> Option<Constraint> {
    match step {
        Skill::Pick(x) => Some(Constraint::Holding(x.clone())),
        Skill::Place(x, y) => Some(Constraint::On(x.clone(), y.clone())),
        Skill::GoTo(p) => Some(Constraint::At(p.clone())),
        _ => None,
    }
}

/// Everything needed to (re)run one episode.
#[derive(Clone, Debug)]
pub struct EpisodeSpec<'a> {
    pub task: &'a TaskSpec,
    pub seed: u64,
    pub policy: &'a ExecutivePolicy,
    pub cfg: &'a SimConfig,
    pub injections: &'a [Injection],
}

/// Runs one episode with the policy's own rates-based detector.
pub fn run_episode(spec: &EpisodeSpec<'_>, planner: &mut dyn Planner) -> Result<EpisodeTrace, ExecError> {
    let mut det = ModelDetector::new(spec.seed);
    run_episode_with(spec, planner, &mut det)
}

struct Run<'a> {
    spec: &'a EpisodeSpec<'a>,
    world: WorldState,
    events: Vec<TraceEvent>,
    replans: u32,
    checks: u32,
    timeout_ticks: u64,
    terminal: Option<EpisodeOutcome>,
}

impl Run<'_> {
    fn log(&mut self, event: Event) {
        self.events.push(TraceEvent { tick: self.world.tick, event });
    }

    fn log_checks(&mut self, records: &[CheckRecord]) {
        for r in records {
            self.checks += 1;
            self.log(Event::Check { constraint: r.constraint.text(), truth: r.truth, reported: r.reported });
        }
    }

    fn finish(&mut self, outcome: EpisodeOutcome) {
        match &outcome {
            EpisodeOutcome::Success => self.log(Event::Success),
            EpisodeOutcome::Failure(r) => {
                if r == "timeout" {
                    self.log(Event::Timeout);
                }
                self.log(Event::Failure { reason: r.clone() });
            }
        }
        self.terminal = Some(outcome);
    }

    /// World tick plus disturbance logging; returns true if the episode ended.
    fn tick(&mut self, control: &crate::world::ControlInput) -> Vec<crate::world::DisturbanceEvent> {
        let ds = self.world.step(control);
        for d in &ds {
            self.log(Event::Disturbance { what: d.kind.to_string() });
        }
        ds
    }

    /// Phase 5. Returns true when the episode is over.
    fn terminated(&mut self) -> bool {
        if self.world.is_task_success(self.spec.task) {
            self.finish(EpisodeOutcome::Success);
        } else if self.world.collided {
            self.finish(EpisodeOutcome::Failure("collision".into()));
        } else if self.world.tick >= self.timeout_ticks {
            self.finish(EpisodeOutcome::Failure("timeout".into()));
        }
        self.terminal.is_some()
    }

    /// Standing still for `ticks`; returns true if the episode ended.
    fn idle(&mut self, ticks: u32) -> bool {
        for _ in 0..ticks {
            self.tick(&crate::world::ControlInput::idle());
            if self.terminated() {
                return true;
            }
        }
        false
    }
}

/// Runs one episode with an explicit detector backend.
pub fn run_episode_with(
    spec: &EpisodeSpec<'_>,
    planner: &mut dyn Planner,
    detector: &mut dyn Detector,
) -> Result<EpisodeTrace, ExecError> {
    let cfg = spec.cfg;
    let policy = spec.policy;
    policy.validate()?;
    let world = new_world(spec.task, spec.seed, cfg)?.with_injections(spec.injections.to_vec());
    let header = TraceHeader {
        version: TRACE_VERSION,
        task: spec.task.clone(),
        seed: spec.seed,
        policy: policy.clone(),
        injections: spec.injections.to_vec(),
        config_digest: cfg.digest(),
        ticks_per_second: cfg.tps(),
        config: cfg.clone(),
    };
    let mut run = Run {
        spec,
        world,
        events: Vec::new(),
        replans: 0,
        checks: 0,
        timeout_ticks: u64::from(cfg.ticks(spec.task.timeout_s)),
        terminal: None,
    };
    let oracle = DetectorModel::oracle(cfg);
    // IM-Oracle asks the same questions but gets exact answers
    let model = if policy.kind == PolicyKind::IMOracle { &oracle } else { &policy.detector };
    let period = u64::from(model.period_ticks);
    let latency = u64::from(cfg.ticks(cfg.executive.query_latency_s));
    let replan_latency = cfg.ticks(cfg.executive.replan_latency_s);
    let halt = cfg.ticks(if spec.task.family.is_arm() { cfg.arm.abort_halt_s } else { cfg.humanoid.abort_halt_s });
    let mut prompt = PromptState::new(&spec.task.instruction);
    // repeat-until-success: the current unit and the steps queued to redo it
    let mut unit: Vec<PlanDecision> = Vec::new();
    let mut redo: Vec<PlanDecision> = Vec::new();
    let mut planner_calls = 0u32;

    'episode: while run.terminal.is_none() {
        let decision = if !redo.is_empty() {
            redo.remove(0)
        } else {
            planner_calls += 1;
            if planner_calls > 10_000 {
                run.finish(EpisodeOutcome::Failure("planner: step limit".into()));
                break;
            }
            if prompt.feedback.is_some() {
                run.replans += 1;
            }
            match planner.plan_next(&prompt, spec.task) {
                Ok(d) => d,
                Err(e) => {
                    run.finish(EpisodeOutcome::Failure(format!("planner: {e}")));
                    break;
                }
            }
        };
        prompt.consume_feedback();
        run.log(Event::Plan {
            step: decision.step.text(),
            constraints: decision.constraints.iter().map(Constraint::text).collect(),
        });
        if decision.step.is_done() {
            let outcome = if run.world.is_task_success(spec.task) {
                EpisodeOutcome::Success
            } else {
                EpisodeOutcome::Failure("plan finished but the task is not done".into())
            };
            run.finish(outcome);
            break;
        }
        if run.idle(replan_latency) {
            break;
        }
        if policy.kind == PolicyKind::RepeatUntilSuccess {
            unit.push(decision.clone());
        }

        run.log(Event::SkillStart { step: decision.step.text() });
        let mut exec = start_skill(&decision.step, &run.world, cfg);
        let mut confirmation = Confirmation::default();
        let mut pending: Option<(u64, Vec<Constraint>)> = None;
        let mut armed = effect_done(&exec);
        let mut aborted: Option<Vec<Constraint>> = None;

        while exec.is_running() {
            let control = skill_step(&mut exec);
            run.tick(&control);
            if !armed && effect_done(&exec) {
                armed = true;
                for c in decision.constraints.iter() {
                    if activity(c, &decision.step) == Activity::Effect {
                        run.log(Event::Armed { constraint: c.text() });
                    }
                }
            }
            let t = run.world.tick;
            if policy.kind.uses_periodic_checks() && t % period == 0 && exec.is_running() {
                let active = active_constraints(&decision, &exec);
                if !active.is_empty() {
                    let records = match detector.check(model, &active, &run.world) {
                        Ok(r) => r,
                        Err(e) => {
                            run.finish(EpisodeOutcome::Failure(format!("detector: {e}")));
                            break 'episode;
                        }
                    };
                    run.log_checks(&records);
                    let confirmed = confirmation.update(&records, model.confirmation_k);
                    if !confirmed.is_empty() && pending.is_none() {
                        pending = Some((t + latency, confirmed));
                    }
                }
            }
            if let Some((due, _)) = &pending {
                if *due <= t && exec.is_running() {
                    let (_, v) = pending.take().unwrap();
                    run.log(Event::Violation { constraints: v.iter().map(Constraint::text).collect() });
                    run.log(Event::Abort { step: decision.step.text() });
                    aborted = Some(v);
                }
            }
            if aborted.is_none() && !exec.is_running() {
                run.log(Event::SkillEnd { step: decision.step.text(), status: status_text(&exec.status) });
            }
            if run.terminated() {
                break 'episode;
            }
            if aborted.is_some() {
                break;
            }
        }

        if let Some(violated) = aborted {
            let progress = matches!(decision.step, Skill::GoForward(_) | Skill::MoveAtSpeed(_)).then_some(exec.progress_mm);
            prompt.history.push(HistoryEntry {
                step: decision.step.clone(),
                constraints: decision.constraints.clone(),
                outcome: Outcome::Aborted { progress_mm: progress },
                feedback: None,
            });
            prompt.feedback = encode_feedback(&violated, run.world.tick, &decision.step).ok();
            if run.idle(halt) {
                break;
            }
            continue;
        }

        // skills that never ran a tick end here
        if exec.elapsed_ticks == 0 {
            run.log(Event::SkillEnd { step: decision.step.text(), status: status_text(&exec.status) });
        }
        let outcome = match (&exec.status, policy.kind) {
            (_, PolicyKind::SayCan) => Outcome::Done,
            (SkillStatus::Failed(r), _) => Outcome::Failed(r.clone()),
            _ => Outcome::Done,
        };
        prompt.history.push(HistoryEntry {
            step: decision.step.clone(),
            constraints: decision.constraints.clone(),
            outcome,
            feedback: None,
        });

        match policy.kind {
            PolicyKind::SayCan | PolicyKind::DoReMi => {}
            PolicyKind::InnerMonologue | PolicyKind::IMOracle => {
                let active = active_constraints(&decision, &exec);
                if !active.is_empty() {
                    let records = match detector.check(model, &active, &run.world) {
                        Ok(r) => r,
                        Err(e) => {
                            run.finish(EpisodeOutcome::Failure(format!("detector: {e}")));
                            break;
                        }
                    };
                    run.log_checks(&records);
                    let violated: Vec<Constraint> =
                        records.iter().filter(|r| !r.reported).map(|r| r.constraint.clone()).collect();
                    prompt.feedback = encode_feedback(&violated, run.world.tick, &decision.step).ok();
                }
            }
            PolicyKind::RepeatUntilSuccess => {
                // on the arm a pick and its place form one unit, checked after the place
                let part_of_unit = spec.task.family.is_arm() && matches!(decision.step, Skill::Pick(_));
                if !part_of_unit {
                    let ok = match postcondition(&decision.step) {
                        None => true,
                        Some(c) => {
                            let records = match detector.check(model, std::slice::from_ref(&c), &run.world) {
                                Ok(r) => r,
                                Err(e) => {
                                    run.finish(EpisodeOutcome::Failure(format!("detector: {e}")));
                                    break;
                                }
                            };
                            run.log_checks(&records);
                            records[0].reported
                        }
                    };
                    if ok {
                        unit.clear();
                    } else {
                        redo = std::mem::take(&mut unit);
                    }
                }
            }
        }
    }

    let outcome = run.terminal.clone().expect("episode ended without an outcome");
    Ok(EpisodeTrace {
        header,
        duration_ticks: run.world.tick,
        replan_count: run.replans,
        check_count: run.checks,
        events: run.events,
        outcome,
    })
}

fn status_text(s: &SkillStatus) -> String {
    match s {
        SkillStatus::Running => "running".into(),
        SkillStatus::Finished => "finished".into(),
        SkillStatus::Failed(r) => format!("failed: {r}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::ScriptedPlanner;
    use crate::world::InjectAction;

    fn go(task: &TaskSpec, label: &str, seed: u64, injections: &[Injection]) -> EpisodeTrace {
        let cfg = SimConfig::default();
        let policy = ExecutivePolicy::named(label, task.family, &cfg).unwrap();
        let spec = EpisodeSpec { task, seed, policy: &policy, cfg: &cfg, injections };
        run_episode(&spec, &mut ScriptedPlanner).unwrap()
    }

    #[test]
    fn nominal_durations() {
        let cfg = SimConfig::default();
        for (task, ticks) in [
            (TaskSpec::pick_place(0.0, &cfg), 54),
            (TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg), 144),
            (TaskSpec::obstacle_avoid(0.0, &cfg), 484),
            (TaskSpec::move_box(0.0, &cfg), 644),
        ] {
            for label in ExecutivePolicy::LABELS {
                let t = go(&task, label, 3, &[]);
                assert!(t.success(), "{label} {:?}: {}", task.family, t.outcome);
                if label == "saycan" || label == "im-oracle" || task.family.is_arm() {
                    assert_eq!(t.duration_ticks, ticks, "{label} {:?}", task.family);
                }
            }
        }
    }

    #[test]
    fn doremi_aborts_and_repicks_a_dropped_box() {
        let cfg = SimConfig::default();
        let task = TaskSpec::move_box(0.0, &cfg);
        let inj = [Injection { tick: 300, action: InjectAction::Drop }];
        let t = go(&task, "im-oracle", 1, &inj);
        let d = go(&task, "doremi", 1, &inj);
        assert!(d.success() && t.success());
        let abort = d.events.iter().find(|e| matches!(e.event, Event::Abort { .. })).unwrap();
        assert!(abort.tick >= 300 && abort.tick - 300 <= 4);
        assert!(d.steps().contains(&"Pick the box".to_string()));
        assert!(d.duration_ticks < t.duration_ticks);
        assert_eq!(t.count("Abort"), 0);
    }

    #[test]
    fn baselines_never_abort() {
        let cfg = SimConfig::default();
        let task = TaskSpec::stack(&["brown", "red", "green"], 2.0, 0.1, &cfg);
        for label in ["saycan", "repeat", "im", "im-oracle"] {
            for seed in 0..20 {
                assert_eq!(go(&task, label, seed, &[]).count("Abort"), 0);
            }
        }
    }
}

//! Low-level skill controllers.
//!
//! A controller turns a [`Skill`] into a fixed list of timed segments at start
//! (straight-line moves at constant speed, dwells) and then replays them one
//! tick at a time. It never looks at task success: a place "finishes" once
//! the release motion is done, whether or not the object stayed put.

use crate::config::SimConfig;
use crate::entity::Entity;
use crate::geometry::{format_mm_as_m, parse_m_as_mm, travel_ticks, Point};
use crate::world::{ControlInput, GripAction, Surface, WorldState};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Skill {
    Pick(Entity),
    Place(Entity, Entity),
    PutDown(Entity),
    GoTo(Entity),
    /// Distance in millimetres.
    GoForward(u32),
    /// Speed in millimetres per second.
    MoveAtSpeed(u32),
    Turn(Direction),
    Done,
}

/// `table A` is a proper name; everything else takes "the".
fn np(e: &Entity) -> String {
    match e {
        Entity::Item(n) if n.starts_with("table ") => n.clone(),
        _ => format!("the {}", e.noun()),
    }
}

impl Skill {
    /// Step text as it appears in plans and transcripts.
    pub fn text(&self) -> String {
        match self {
            Skill::Pick(x) => format!("Pick {}", np(x)),
            Skill::Place(x, y) => format!("Place {} on {}", np(x), np(y)),
            Skill::PutDown(x) => format!("Put down {}", np(x)),
            Skill::GoTo(p) => format!("Go to {}", np(p)),
            Skill::GoForward(mm) => format!("Go forward {} meters", format_mm_as_m(*mm)),
            Skill::MoveAtSpeed(mm) => format!("Move forward at speed {} m/s", format_mm_as_m(*mm)),
            Skill::Turn(Direction::Left) => "Turn left".into(),
            Skill::Turn(Direction::Right) => "Turn right".into(),
            Skill::Done => "done".into(),
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, Skill::Done)
    }

    /// Manipulation skills change what the hand holds.
    pub fn is_manipulation(&self) -> bool {
        matches!(self, Skill::Pick(_) | Skill::Place(..) | Skill::PutDown(_))
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown skill `{0}`")]
pub struct UnknownSkill(pub String);

struct SkillPatterns {
    pick: Regex,
    place: Regex,
    put_down: Regex,
    go_to: Regex,
    forward: Regex,
    speed: Regex,
    turn: Regex,
}

fn skill_patterns() -> &'static SkillPatterns {
    static P: OnceLock<SkillPatterns> = OnceLock::new();
    P.get_or_init(|| SkillPatterns {
        pick: Regex::new(r"^pick(?: up)? (.+)$").unwrap(),
        place: Regex::new(r"^(?:place|put) (.+?) (?:on|in|into) (.+)$").unwrap(),
        put_down: Regex::new(r"^put down (.+)$").unwrap(),
        go_to: Regex::new(r"^go to (.+)$").unwrap(),
        forward: Regex::new(r"^go forward ([0-9.]+) (?:meters|meter|m)$").unwrap(),
        speed: Regex::new(r"^move forward at speed ([0-9.]+) ?m/s$").unwrap(),
        turn: Regex::new(r"^turn (left|right)$").unwrap(),
    })
}

fn skill_entity(text: &str) -> Result<Entity, UnknownSkill> {
    let t = text.trim();
    let fixed = match t.strip_prefix("table ") {
        Some(rest) if rest.len() == 1 => format!("table {}", rest.to_uppercase()),
        _ => t.to_string(),
    };
    Entity::parse_noun(&fixed).ok_or_else(|| UnknownSkill(text.to_string()))
}

/// Inverse of [`Skill::text`]; case-insensitive, trailing period allowed.
pub fn parse_skill(text: &str) -> Result<Skill, UnknownSkill> {
    let t = text.trim().trim_end_matches('.').trim().to_lowercase();
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    let p = skill_patterns();
    let err = || UnknownSkill(text.to_string());
    if t == "done" {
        return Ok(Skill::Done);
    }
    if let Some(c) = p.put_down.captures(&t) {
        return Ok(Skill::PutDown(skill_entity(&c[1])?));
    }
    if let Some(c) = p.place.captures(&t) {
        return Ok(Skill::Place(skill_entity(&c[1])?, skill_entity(&c[2])?));
    }
    if let Some(c) = p.pick.captures(&t) {
        return Ok(Skill::Pick(skill_entity(&c[1])?));
    }
    if let Some(c) = p.go_to.captures(&t) {
        return Ok(Skill::GoTo(skill_entity(&c[1])?));
    }
    if let Some(c) = p.forward.captures(&t) {
        return Ok(Skill::GoForward(parse_m_as_mm(&c[1]).ok_or_else(err)?));
    }
    if let Some(c) = p.speed.captures(&t) {
        return Ok(Skill::MoveAtSpeed(parse_m_as_mm(&c[1]).ok_or_else(err)?));
    }
    if let Some(c) = p.turn.captures(&t) {
        return Ok(Skill::Turn(if &c[1] == "left" { Direction::Left } else { Direction::Right }));
    }
    Err(err())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkillStatus {
    Running,
    Finished,
    Failed(String),
}

/// Something the controller does on the last tick of a segment.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Action {
    Attach(Entity),
    /// Object already in hand: nothing to grip, but the grasp counts as done.
    Regrasp,
    Release(Entity, Surface),
    Arrive,
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    from: Point,
    to: Point,
    ticks: u32,
    action: Option<Action>,
}

impl Segment {
    fn moving(from: Point, to: Point, ticks: u32) -> Self {
        Self { from, to, ticks, action: None }
    }
    fn dwell(at: Point, ticks: u32, action: Option<Action>) -> Self {
        // an action needs a tick to happen on
        let ticks = if action.is_some() { ticks.max(1) } else { ticks };
        Self { from: at, to: at, ticks, action }
    }
}

/// A running controller.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillExecution {
    pub skill: Skill,
    pub started_tick: u64,
    pub status: SkillStatus,
    segments: Vec<Segment>,
    seg: usize,
    seg_tick: u32,
    pub elapsed_ticks: u32,
    /// The grasp completed (from the controller's point of view).
    pub attached: bool,
    pub released: bool,
    pub arrived: bool,
    /// Odometry along the heading, millimetres (GoForward / MoveAtSpeed).
    pub progress_mm: u32,
    origin: Point,
    heading: Point,
}

impl SkillExecution {
    fn new(skill: Skill, world: &WorldState, segments: Vec<Segment>) -> Self {
        let mut exec = Self {
            skill,
            started_tick: world.tick,
            status: SkillStatus::Running,
            segments: segments.into_iter().filter(|s| s.ticks > 0).collect(),
            seg: 0,
            seg_tick: 0,
            elapsed_ticks: 0,
            attached: false,
            released: false,
            arrived: false,
            progress_mm: 0,
            origin: world.robot.position,
            heading: world.robot.heading,
        };
        if exec.segments.is_empty() {
            exec.status = SkillStatus::Finished;
            exec.arrived = true;
        }
        exec
    }

    fn failed(skill: Skill, world: &WorldState, reason: &str) -> Self {
        let mut exec = Self::new(skill, world, Vec::new());
        exec.arrived = false;
        exec.status = SkillStatus::Failed(reason.to_string());
        exec
    }

    pub fn is_running(&self) -> bool {
        self.status == SkillStatus::Running
    }

    /// Total ticks of the motion plan.
    pub fn planned_ticks(&self) -> u32 {
        self.segments.iter().map(|s| s.ticks).sum()
    }
}

/// Builds the controller for `skill` from the current world.
pub fn start_skill(skill: &Skill, world: &WorldState, cfg: &SimConfig) -> SkillExecution {
    let arm = world.family.is_arm();
    let tps = cfg.tps();
    let here = world.robot.position;
    let speed = if arm { cfg.arm.speed } else { cfg.humanoid.walk_speed };
    let travel = |to: Point| travel_ticks(here.distance(to), speed, tps);
    let fail = |reason: &str| SkillExecution::failed(skill.clone(), world, reason);
    let (grasp, lower, retreat, regrasp) = if arm {
        (cfg.arm.grasp_s, cfg.arm.lower_s, cfg.arm.retreat_s, cfg.arm.regrasp_s)
    } else {
        (cfg.humanoid.pick_s, cfg.humanoid.lower_s, cfg.humanoid.retreat_s, cfg.humanoid.regrasp_s)
    };
    let (grasp, lower, retreat, regrasp) = (cfg.ticks(grasp), cfg.ticks(lower), cfg.ticks(retreat), cfg.ticks(regrasp));

    let segments = match skill {
        Skill::Done => return fail("done is not an executable skill"),
        Skill::Pick(x) => {
            let Some(obj) = world.objects.get(x) else { return fail("unknown target") };
            if obj.kind.is_fixed() {
                return fail("target cannot be picked");
            }
            match &world.held {
                Some(h) if h == x => vec![Segment::dwell(here, regrasp, Some(Action::Regrasp))],
                Some(h) => return fail(&format!("hand occupied by {}", h.noun())),
                None => vec![
                    Segment::moving(here, obj.position, travel(obj.position)),
                    Segment::dwell(obj.position, grasp, Some(Action::Attach(x.clone()))),
                ],
            }
        }
        Skill::Place(x, y) => {
            if !world.objects.contains_key(x) {
                return fail("unknown target");
            }
            let Some(dest) = world.objects.get(y) else { return fail("unknown target") };
            // the controller cannot tell an empty hand: it goes through the motion
            vec![
                Segment::moving(here, dest.position, travel(dest.position)),
                Segment::dwell(dest.position, lower, Some(Action::Release(x.clone(), Surface::Object(y.clone())))),
                Segment::dwell(dest.position, retreat, None),
            ]
        }
        Skill::PutDown(x) => {
            if !world.objects.contains_key(x) {
                return fail("unknown target");
            }
            vec![
                Segment::dwell(here, lower, Some(Action::Release(x.clone(), Surface::Ground))),
                Segment::dwell(here, retreat, None),
            ]
        }
        _ if arm => return fail("skill not available on this robot"),
        Skill::GoTo(p) => {
            let Some(dest) = world.objects.get(p) else { return fail("unknown target") };
            let ticks = travel(dest.position);
            if ticks == 0 {
                Vec::new()
            } else {
                let mut s = Segment::moving(here, dest.position, ticks);
                s.action = Some(Action::Arrive);
                vec![s]
            }
        }
        Skill::GoForward(mm) => {
            let d = f64::from(*mm) / 1000.0;
            let to = here + world.robot.heading * d;
            vec![Segment::moving(here, to, travel_ticks(d, speed, tps))]
        }
        Skill::MoveAtSpeed(mm_s) => {
            let ticks = cfg.ticks(cfg.humanoid.move_at_speed_s);
            let d = f64::from(*mm_s) / 1000.0 * cfg.humanoid.move_at_speed_s;
            vec![Segment::moving(here, here + world.robot.heading * d, ticks)]
        }
        Skill::Turn(dir) => {
            let side = world.robot.heading.left_normal() * cfg.humanoid.sidestep_m;
            let to = match dir {
                Direction::Left => here + side,
                Direction::Right => here - side,
            };
            vec![Segment::moving(here, to, cfg.ticks(cfg.humanoid.turn_s))]
        }
    };
    SkillExecution::new(skill.clone(), world, segments)
}

/// One controller tick: returns the control to apply this tick. The status
/// is updated to `Finished` on the tick that issues the final motion.
pub fn skill_step(exec: &mut SkillExecution) -> ControlInput {
    if !exec.is_running() {
        return ControlInput::idle();
    }
    let seg = &exec.segments[exec.seg];
    exec.seg_tick += 1;
    exec.elapsed_ticks += 1;
    let pos = seg.from.lerp_ratio(seg.to, exec.seg_tick, seg.ticks);
    let mut control = ControlInput { move_to: Some(pos), grip: GripAction::None };
    let last = exec.seg_tick == seg.ticks;
    if last {
        match seg.action.clone() {
            Some(Action::Attach(x)) => {
                control.grip = GripAction::Attach(x);
                exec.attached = true;
            }
            Some(Action::Regrasp) => exec.attached = true,
            Some(Action::Release(x, onto)) => {
                control.grip = GripAction::Release { object: x, onto };
                exec.released = true;
            }
            Some(Action::Arrive) => exec.arrived = true,
            None => {}
        }
        exec.seg += 1;
        exec.seg_tick = 0;
        if exec.seg == exec.segments.len() {
            exec.status = SkillStatus::Finished;
        }
    }
    if matches!(exec.skill, Skill::GoForward(_) | Skill::MoveAtSpeed(_)) {
        let along = (pos - exec.origin).dot(exec.heading);
        // rounded down so the remaining distance never falls short
        exec.progress_mm = (along * 1000.0 + 1e-6).floor().max(0.0) as u32;
    }
    control
}

/// Ticks the skill takes from `world` when nothing disturbs it.
pub fn nominal_duration(skill: &Skill, world: &WorldState, cfg: &SimConfig) -> u32 {
    let exec = start_skill(skill, world, cfg);
    if matches!(exec.status, SkillStatus::Failed(_)) {
        0
    } else {
        exec.planned_ticks()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::Constraint;
    use crate::world::{new_world, TaskSpec};

    fn run(exec: &mut SkillExecution, w: &mut WorldState) -> u32 {
        let mut n = 0;
        while exec.is_running() {
            let c = skill_step(exec);
            w.step(&c);
            n += 1;
        }
        n
    }

    #[test]
    fn text_round_trips() {
        let skills = [
            Skill::Pick(Entity::block("red")),
            Skill::Place(Entity::block("red"), Entity::block("brown")),
            Skill::Place(Entity::item("apple"), Entity::item("basket")),
            Skill::PutDown(Entity::item("box")),
            Skill::GoTo(Entity::item("table B")),
            Skill::GoTo(Entity::item("basket")),
            Skill::GoForward(10_000),
            Skill::GoForward(6_777),
            Skill::MoveAtSpeed(500),
            Skill::Turn(Direction::Left),
            Skill::Turn(Direction::Right),
            Skill::Done,
        ];
        for s in skills {
            assert_eq!(parse_skill(&s.text()), Ok(s.clone()), "{}", s.text());
        }
        assert_eq!(Skill::Pick(Entity::block("red")).text(), "Pick the red block");
        assert_eq!(
            Skill::Place(Entity::block("red"), Entity::block("brown")).text(),
            "Place the red block on the brown block"
        );
        assert_eq!(Skill::GoTo(Entity::item("table B")).text(), "Go to table B");
        assert!(parse_skill("fly to the moon").is_err());
    }

    #[test]
    fn pick_place_durations_and_effects() {
        let c = SimConfig::default();
        let mut w = new_world(&TaskSpec::pick_place(0.0, &c), 1, &c).unwrap();
        let red = Entity::block("red");
        let fixture = Entity::item("fixture");
        let pick = Skill::Pick(red.clone());
        assert_eq!(nominal_duration(&pick, &w, &c), 31);
        let mut e = start_skill(&pick, &w, &c);
        assert!(e.is_running());
        assert_eq!(run(&mut e, &mut w), 31);
        assert_eq!(e.status, SkillStatus::Finished);
        assert!(w.evaluate_predicate(&Constraint::Holding(red.clone())).unwrap());

        let place = Skill::Place(red.clone(), fixture.clone());
        let mut e = start_skill(&place, &w, &c);
        // carry 18 + lower 5 + retreat 17
        assert_eq!(e.planned_ticks(), 40);
        assert_eq!(run(&mut e, &mut w), 40);
        assert!(w.evaluate_predicate(&Constraint::On(red.clone(), fixture.clone())).unwrap());

        // an empty-handed place still runs its motion and changes nothing
        let mut e = start_skill(&Skill::Place(red.clone(), fixture.clone()), &w, &c);
        assert!(e.is_running());
        run(&mut e, &mut w);
        assert!(e.released && w.held.is_none());
        assert!(w.evaluate_predicate(&Constraint::On(red.clone(), fixture)).unwrap());
    }

    #[test]
    fn regrasp_and_occupied_hand() {
        let c = SimConfig::default();
        let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &c);
        let mut w = new_world(&task, 1, &c).unwrap();
        let red = Entity::block("red");
        let mut e = start_skill(&Skill::Pick(red.clone()), &w, &c);
        run(&mut e, &mut w);
        let mut again = start_skill(&Skill::Pick(red.clone()), &w, &c);
        assert_eq!(run(&mut again, &mut w), 2);
        assert!(again.attached);
        let other = start_skill(&Skill::Pick(Entity::block("green")), &w, &c);
        assert_eq!(other.status, SkillStatus::Failed("hand occupied by red block".into()));
    }

    #[test]
    fn place_finishes_even_when_the_block_topples() {
        let mut c = SimConfig::default();
        c.geometry.topple_cm = 0.5;
        let task = TaskSpec::stack(&["brown", "red"], 3.0, 0.0, &c);
        let (red, brown) = (Entity::block("red"), Entity::block("brown"));
        let mut toppled = 0;
        for seed in 0..20 {
            let mut w = new_world(&task, seed, &c).unwrap();
            run(&mut start_skill(&Skill::Pick(red.clone()), &w, &c), &mut w);
            let mut e = start_skill(&Skill::Place(red.clone(), brown.clone()), &w, &c);
            run(&mut e, &mut w);
            assert_eq!(e.status, SkillStatus::Finished);
            if !w.evaluate_predicate(&Constraint::On(red.clone(), brown.clone())).unwrap() {
                toppled += 1;
            }
        }
        assert!(toppled > 10);
    }

    #[test]
    fn walking_skills() {
        let c = SimConfig::default();
        let mut w = new_world(&TaskSpec::obstacle_avoid(0.0, &c), 1, &c).unwrap();
        assert_eq!(nominal_duration(&Skill::GoForward(0), &w, &c), 0);
        let e = start_skill(&Skill::GoForward(0), &w, &c);
        assert_eq!(e.status, SkillStatus::Finished);
        assert_eq!(nominal_duration(&Skill::Turn(Direction::Left), &w, &c), 20);
        let mut e = start_skill(&Skill::GoForward(10_000), &w, &c);
        assert_eq!(e.planned_ticks(), 484);
        for _ in 0..242 {
            let ctl = skill_step(&mut e);
            w.step(&ctl);
        }
        assert_eq!(e.progress_mm, 5000);
        let mut t = start_skill(&Skill::Turn(Direction::Left), &w, &c);
        run(&mut t, &mut w);
        assert!((w.robot.position.y - 0.6).abs() < 1e-12);
        assert!((w.robot.position.x - 5.0).abs() < 1e-12);

        let mut w = new_world(&TaskSpec::move_box(0.0, &c), 1, &c).unwrap();
        let ta = Skill::GoTo(Entity::item("table A"));
        assert_eq!(nominal_duration(&ta, &w, &c), 146);
        let mut e = start_skill(&ta, &w, &c);
        run(&mut e, &mut w);
        assert!(e.arrived);
        assert!(w.evaluate_predicate(&Constraint::At(Entity::item("table A"))).unwrap());
        assert_eq!(nominal_duration(&Skill::Pick(Entity::item("box")), &w, &c), 48);
        assert_eq!(start_skill(&Skill::GoForward(1), &new_world(&TaskSpec::pick_place(0.0, &c), 1, &c).unwrap(), &c).status,
            SkillStatus::Failed("skill not available on this robot".into()));
    }

    #[test]
    fn unknown_targets_fail_immediately() {
        let c = SimConfig::default();
        let w = new_world(&TaskSpec::pick_place(0.0, &c), 1, &c).unwrap();
        let e = start_skill(&Skill::Pick(Entity::block("purple")), &w, &c);
        assert_eq!(e.status, SkillStatus::Failed("unknown target".into()));
    }
}

//! Ground-truth simulation of the tabletop and walking-robot scenes.
//!
//! Time advances in whole ticks. [`WorldState::step`] runs the first three
//! phases of a tick: apply the control (motion, then grip), then sample
//! disturbances. Detector checks and termination belong to the executive.

use crate::config::{ConfigError, SimConfig};
use crate::constraint::Constraint;
use crate::entity::Entity;
use crate::geometry::{exp_neg, per_tick_probability, Point};
use crate::rng::Streams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    PickPlace,
    StackInOrder,
    ObstacleAvoid,
    MoveBox,
    PrepareFood,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::PickPlace,
        Family::StackInOrder,
        Family::ObstacleAvoid,
        Family::MoveBox,
        Family::PrepareFood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::PickPlace => "pick-place",
            Family::StackInOrder => "stack",
            Family::ObstacleAvoid => "obstacle",
            Family::MoveBox => "move-box",
            Family::PrepareFood => "prepare-food",
        }
    }

    pub fn is_arm(self) -> bool {
        matches!(self, Family::PickPlace | Family::StackInOrder)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| ConfigError::UnknownFamily(s.to_string()))
    }
}

/// What counts as finishing the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Goal {
    OnFixture { block: Entity, fixture: Entity },
    /// Bottom block first.
    StackOrder(Vec<Entity>),
    PassFinish { distance_mm: u32 },
    Deliver { object: Entity, from: Entity, to: Entity },
    FoodsIn { foods: Vec<Entity>, basket: Entity },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub instruction: String,
    /// Per-second probability that a held object drops.
    pub drop_p: f64,
    /// Upper bound of the placement error radius, cm.
    pub place_noise_n: f64,
    pub pick_fail_p1: f64,
    pub obstacle_d: f64,
    pub timeout_s: f64,
    pub goal: Goal,
}

impl TaskSpec {
    pub fn pick_place(drop_p: f64, cfg: &SimConfig) -> Self {
        Self {
            family: Family::PickPlace,
            instruction: "Pick up the red block and place it on the fixture.".into(),
            drop_p,
            place_noise_n: 0.0,
            pick_fail_p1: 0.0,
            obstacle_d: 0.0,
            timeout_s: cfg.timeouts.arm_s,
            goal: Goal::OnFixture {
                block: Entity::block("red"),
                fixture: Entity::item("fixture"),
            },
        }
    }

    /// `order` lists colours bottom first, as in "brown, red, and green".
    pub fn stack(order: &[&str], noise_cm: f64, drop_p: f64, cfg: &SimConfig) -> Self {
        Self {
            family: Family::StackInOrder,
            instruction: format!("Stack blocks in the order of {}.", english_list(order)),
            drop_p,
            place_noise_n: noise_cm,
            pick_fail_p1: 0.0,
            obstacle_d: 0.0,
            timeout_s: cfg.timeouts.arm_s,
            goal: Goal::StackOrder(order.iter().map(|c| Entity::block(c)).collect()),
        }
    }

    pub fn obstacle_avoid(density: f64, cfg: &SimConfig) -> Self {
        let mm = (cfg.geometry.corridor_length_m * 1000.0).round() as u32;
        Self {
            family: Family::ObstacleAvoid,
            instruction: format!(
                "Go forward {} meters to the finish line.",
                crate::geometry::format_mm_as_m(mm)
            ),
            drop_p: 0.0,
            place_noise_n: 0.0,
            pick_fail_p1: 0.0,
            obstacle_d: density,
            timeout_s: cfg.timeouts.humanoid_s,
            goal: Goal::PassFinish { distance_mm: mm },
        }
    }

    pub fn move_box(drop_p: f64, cfg: &SimConfig) -> Self {
        Self {
            family: Family::MoveBox,
            instruction: "Move the box from table A to table B.".into(),
            drop_p,
            place_noise_n: 0.0,
            pick_fail_p1: 0.0,
            obstacle_d: 0.0,
            timeout_s: cfg.timeouts.humanoid_s,
            goal: Goal::Deliver {
                object: Entity::item("box"),
                from: Entity::item("table A"),
                to: Entity::item("table B"),
            },
        }
    }

    pub fn prepare_food(pick_fail_p1: f64, drop_p: f64, cfg: &SimConfig) -> Self {
        let foods: Vec<&str> = cfg.layout.prepare_food.foods.iter().map(String::as_str).collect();
        let named: Vec<String> = foods.iter().map(|f| format!("the {f}")).collect();
        let named: Vec<&str> = named.iter().map(String::as_str).collect();
        Self {
            family: Family::PrepareFood,
            instruction: format!("Put {} in the basket.", english_list(&named)),
            drop_p,
            place_noise_n: 0.0,
            pick_fail_p1,
            obstacle_d: 0.0,
            timeout_s: cfg.timeouts.humanoid_s,
            goal: Goal::FoodsIn {
                foods: foods.iter().map(|f| Entity::item(f)).collect(),
                basket: Entity::item("basket"),
            },
        }
    }

    /// Rebuilds the task an instruction describes (used by protocol servers,
    /// which only see the instruction text).
    pub fn from_instruction(instruction: &str, cfg: &SimConfig) -> Option<Self> {
        let t = instruction.trim();
        if t == TaskSpec::pick_place(0.0, cfg).instruction {
            return Some(TaskSpec::pick_place(0.0, cfg));
        }
        if t == TaskSpec::move_box(0.0, cfg).instruction {
            return Some(TaskSpec::move_box(0.0, cfg));
        }
        if t == TaskSpec::obstacle_avoid(0.0, cfg).instruction {
            return Some(TaskSpec::obstacle_avoid(0.0, cfg));
        }
        if let Some(rest) = t.strip_prefix("Stack blocks in the order of ") {
            let colours = split_english_list(rest.trim_end_matches('.'));
            let refs: Vec<&str> = colours.iter().map(String::as_str).collect();
            return Some(TaskSpec::stack(&refs, 0.0, 0.0, cfg));
        }
        if let Some(rest) = t.strip_prefix("Put ").and_then(|r| r.strip_suffix(" in the basket.")) {
            let foods: Vec<String> = split_english_list(rest)
                .into_iter()
                .map(|f| f.strip_prefix("the ").unwrap_or(&f).to_string())
                .collect();
            let mut cfg = cfg.clone();
            cfg.layout.prepare_food.foods = foods;
            return Some(TaskSpec::prepare_food(0.0, 0.0, &cfg));
        }
        None
    }

    pub fn validate(&self, cfg: &SimConfig) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::InvalidTask(m.to_string()));
        for (name, p) in [("drop_p", self.drop_p), ("pick_fail_p1", self.pick_fail_p1)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name}={p} is not a probability"));
            }
        }
        if !(self.place_noise_n >= 0.0 && self.place_noise_n.is_finite()) {
            return bad("place_noise_n must be >= 0");
        }
        if !(self.obstacle_d >= 0.0 && self.obstacle_d.is_finite()) {
            return bad("obstacle_d must be >= 0");
        }
        if !(self.timeout_s > 0.0) {
            return bad("timeout must be positive");
        }
        match (&self.goal, self.family) {
            (Goal::StackOrder(order), Family::StackInOrder) => {
                if order.len() < 2 || order.len() > cfg.layout.stack.slots.len() {
                    return bad("stack order must name between 2 and the number of slots blocks");
                }
                let mut seen = order.clone();
                seen.sort();
                seen.dedup();
                if seen.len() != order.len() || order.iter().any(|e| !e.is_block()) {
                    return bad("stack order must name distinct blocks");
                }
            }
            (Goal::OnFixture { .. }, Family::PickPlace)
            | (Goal::PassFinish { .. }, Family::ObstacleAvoid)
            | (Goal::Deliver { .. }, Family::MoveBox) => {}
            (Goal::FoodsIn { foods, .. }, Family::PrepareFood) => {
                if foods.is_empty() {
                    return bad("no foods requested");
                }
            }
            _ => return bad("goal does not match family"),
        }
        Ok(())
    }

    /// Short key naming the disturbance levels, e.g. `n=2 p=0.1`.
    pub fn levels(&self) -> String {
        match self.family {
            Family::PickPlace | Family::MoveBox => format!("p={}", self.drop_p),
            Family::StackInOrder => format!("n={} p={}", self.place_noise_n, self.drop_p),
            Family::ObstacleAvoid => format!("d={}", self.obstacle_d),
            Family::PrepareFood => format!("p1={} p={}", self.pick_fail_p1, self.drop_p),
        }
    }
}

fn english_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [a] => a.to_string(),
        [a, b] => format!("{a} and {b}"),
        _ => {
            let (last, head) = items.split_last().unwrap();
            format!("{}, and {last}", head.join(", "))
        }
    }
}

fn split_english_list(text: &str) -> Vec<String> {
    text.replace(", and ", ", ")
        .replace(" and ", ", ")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectKind {
    Block,
    Fixture,
    Box,
    Food,
    Basket,
    Table,
}

impl ObjectKind {
    /// Fixed scenery that skills never move.
    pub fn is_fixed(self) -> bool {
        matches!(self, ObjectKind::Fixture | ObjectKind::Basket | ObjectKind::Table)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Table,
    On(Entity),
    Held,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub kind: ObjectKind,
    pub position: Point,
    pub support: Support,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub position: Point,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    /// Base position for the walking robot, end-effector position for the arm.
    pub position: Point,
    /// Unit heading vector.
    pub heading: Point,
}

/// Scheduled disturbance, fired in the disturbance phase of `tick`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub tick: u64,
    pub action: InjectAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InjectAction {
    /// Drop whatever is held (nothing happens with an empty hand).
    Drop,
    /// Knock the object, and everything above it, down to the table.
    Topple(Entity),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DisturbanceKind {
    Drop(Entity),
    PickFail(Entity),
    /// First entry is the block that lost support; the rest fell with it.
    ToppleCascade(Vec<Entity>),
    /// An obstacle came within sensing range of the walking path.
    ObstacleAhead,
}

impl fmt::Display for DisturbanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisturbanceKind::Drop(e) => write!(f, "drop {}", e.noun()),
            DisturbanceKind::PickFail(e) => write!(f, "pick-fail {}", e.noun()),
            DisturbanceKind::ToppleCascade(es) => {
                let names: Vec<String> = es.iter().map(Entity::noun).collect();
                write!(f, "topple {}", names.join(", "))
            }
            DisturbanceKind::ObstacleAhead => f.write_str("obstacle ahead"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    pub tick: u64,
    pub kind: DisturbanceKind,
}

/// Where a released object is put.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Surface {
    /// On top of another object; subject to placement noise and the topple rule.
    Object(Entity),
    /// On the ground under the robot.
    Ground,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum GripAction {
    #[default]
    None,
    Attach(Entity),
    Release { object: Entity, onto: Surface },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ControlInput {
    /// Absolute robot position at the end of the tick; `None` holds still.
    pub move_to: Option<Point>,
    pub grip: GripAction,
}

impl ControlInput {
    pub fn idle() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
}

/// Per-episode physical parameters derived from the task and config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub ticks_per_second: u32,
    pub drop_q: f64,
    pub pick_fail_p1: f64,
    pub place_noise_cm: f64,
    pub topple_cm: f64,
    pub sense_range_m: f64,
    pub robot_radius_m: f64,
    pub at_tolerance_m: f64,
    pub delivery_tolerance_m: f64,
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub tick: u64,
    pub family: Family,
    pub robot: Robot,
    pub held: Option<Entity>,
    pub objects: BTreeMap<Entity, ObjectState>,
    pub obstacles: Vec<Obstacle>,
    pub collided: bool,
    pub params: WorldParams,
    pub rng: Streams,
    pub injections: Vec<Injection>,
}

/// Builds the initial scene for `task`.
pub fn new_world(task: &TaskSpec, seed: u64, cfg: &SimConfig) -> Result<WorldState, ConfigError> {
    task.validate(cfg)?;
    let mut rng = Streams::new(seed);
    let g = &cfg.geometry;
    let params = WorldParams {
        ticks_per_second: cfg.tps(),
        drop_q: per_tick_probability(task.drop_p, cfg.tps()),
        pick_fail_p1: task.pick_fail_p1,
        place_noise_cm: task.place_noise_n,
        topple_cm: g.topple_cm,
        sense_range_m: g.sense_range_m,
        robot_radius_m: g.robot_radius_m,
        at_tolerance_m: g.at_tolerance_m,
        delivery_tolerance_m: g.delivery_tolerance_m,
    };
    let mut objects = BTreeMap::new();
    let mut obstacles = Vec::new();
    let mut put = |e: Entity, kind: ObjectKind, position: Point, support: Support| {
        objects.insert(e, ObjectState { kind, position, support });
    };
    let east = Point::new(1.0, 0.0);
    let robot = match (&task.goal, task.family) {
        (Goal::OnFixture { block, fixture }, Family::PickPlace) => {
            let l = &cfg.layout.pick_place;
            put(block.clone(), ObjectKind::Block, l.block, Support::Table);
            put(fixture.clone(), ObjectKind::Fixture, l.fixture, Support::Table);
            Robot { position: cfg.arm.home, heading: east }
        }
        (Goal::StackOrder(order), Family::StackInOrder) => {
            for (b, slot) in order.iter().zip(&cfg.layout.stack.slots) {
                put(b.clone(), ObjectKind::Block, *slot, Support::Table);
            }
            Robot { position: cfg.arm.home, heading: east }
        }
        (Goal::PassFinish { .. }, Family::ObstacleAvoid) => {
            let n = poisson(g.obstacle_rate * task.obstacle_d, &mut rng.layout);
            for _ in 0..n {
                let x = rng.layout.uniform_in(g.obstacle_x_min_m, g.obstacle_x_max_m);
                obstacles.push(Obstacle {
                    position: Point::new(x, 0.0),
                    radius: g.obstacle_radius_m,
                });
            }
            obstacles.sort_by(|a, b| a.position.x.total_cmp(&b.position.x));
            Robot { position: Point::ORIGIN, heading: east }
        }
        (Goal::Deliver { object, from, to }, Family::MoveBox) => {
            let l = &cfg.layout.move_box;
            put(from.clone(), ObjectKind::Table, l.table_a, Support::Table);
            put(to.clone(), ObjectKind::Table, l.table_b, Support::Table);
            put(object.clone(), ObjectKind::Box, l.table_a, Support::On(from.clone()));
            Robot { position: l.start, heading: east }
        }
        (Goal::FoodsIn { foods, basket }, Family::PrepareFood) => {
            let l = &cfg.layout.prepare_food;
            put(basket.clone(), ObjectKind::Basket, l.basket, Support::Table);
            let extras = l.distractors.iter().map(|d| Entity::item(d));
            for f in foods.iter().cloned().chain(extras) {
                let r = rng.layout.uniform_in(l.ring_min_m, l.ring_max_m);
                let (dx, dy) = rng.layout.unit_direction();
                put(f, ObjectKind::Food, l.basket + Point::new(dx, dy) * r, Support::Table);
            }
            Robot { position: l.basket, heading: east }
        }
        _ => return Err(ConfigError::InvalidTask("goal does not match family".into())),
    };
    Ok(WorldState {
        tick: 0,
        family: task.family,
        robot,
        held: None,
        objects,
        obstacles,
        collided: false,
        params,
        rng,
        injections: Vec::new(),
    })
}

/// Poisson sample by CDF inversion (Knuth's product form needs `exp` anyway).
fn poisson(mu: f64, s: &mut crate::rng::Stream) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    let u = s.uniform();
    let mut k = 0u32;
    let mut p = exp_neg(mu);
    let mut cdf = p;
    while u >= cdf && k < 1000 {
        k += 1;
        p *= mu / f64::from(k);
        cdf += p;
    }
    k
}

impl WorldState {
    pub fn time(&self) -> f64 {
        self.tick as f64 / f64::from(self.params.ticks_per_second)
    }

    pub fn object(&self, e: &Entity) -> Result<&ObjectState, EvalError> {
        self.objects.get(e).ok_or_else(|| EvalError::UnknownEntity(e.noun()))
    }

    pub fn with_injections(mut self, mut injections: Vec<Injection>) -> Self {
        injections.sort_by_key(|i| i.tick);
        self.injections = injections;
        self
    }

    /// Stack level: 0 on the table, one more per object underneath.
    pub fn stack_height(&self, e: &Entity) -> Option<u32> {
        let mut level = 0;
        let mut cur = e;
        for _ in 0..=self.objects.len() {
            match &self.objects.get(cur)?.support {
                Support::Table => return Some(level),
                Support::Held => return None,
                Support::On(below) => {
                    level += 1;
                    cur = below;
                }
            }
        }
        None
    }

    /// Objects resting (directly or transitively) on `e`, nearest first.
    pub fn above(&self, e: &Entity) -> Vec<Entity> {
        let mut out = Vec::new();
        let mut frontier = vec![e.clone()];
        while let Some(cur) = frontier.pop() {
            for (k, o) in &self.objects {
                if o.support == Support::On(cur.clone()) && !out.contains(k) {
                    out.push(k.clone());
                    frontier.push(k.clone());
                }
            }
        }
        out
    }

    /// Ground truth for one constraint.
    pub fn evaluate_predicate(&self, c: &Constraint) -> Result<bool, EvalError> {
        for e in c.entities() {
            self.object(e)?;
        }
        Ok(match c {
            Constraint::Holding(x) => self.held.as_ref() == Some(x),
            Constraint::On(a, b) => self.objects[a].support == Support::On(b.clone()),
            Constraint::ClearAhead => self.clear_ahead(),
            Constraint::At(p) => {
                self.robot.position.distance(self.objects[p].position) <= self.params.at_tolerance_m
            }
        })
    }

    /// No obstacle within sensing range in the robot's swept corridor.
    pub fn clear_ahead(&self) -> bool {
        let h = self.robot.heading;
        !self.obstacles.iter().any(|o| {
            let d = o.position - self.robot.position;
            let ahead = d.dot(h);
            let lateral = d.dot(h.left_normal()).abs();
            ahead > 0.0 && ahead <= self.params.sense_range_m && lateral < self.params.robot_radius_m + o.radius
        })
    }

    pub fn is_task_success(&self, task: &TaskSpec) -> bool {
        let on = |a: &Entity, b: &Entity| {
            self.objects.get(a).map(|o| o.support == Support::On(b.clone())).unwrap_or(false)
        };
        match &task.goal {
            Goal::OnFixture { block, fixture } => on(block, fixture),
            Goal::StackOrder(order) => {
                self.objects.get(&order[0]).map(|o| o.support == Support::Table).unwrap_or(false)
                    && order.windows(2).all(|w| on(&w[1], &w[0]))
            }
            Goal::PassFinish { distance_mm } => {
                !self.collided && self.robot.position.x * 1000.0 >= f64::from(*distance_mm) - 1e-6
            }
            Goal::Deliver { object, to, .. } => match (self.objects.get(object), self.objects.get(to)) {
                (Some(o), Some(dest)) => {
                    o.support != Support::Held
                        && o.position.distance(dest.position) <= self.params.delivery_tolerance_m
                }
                _ => false,
            },
            Goal::FoodsIn { foods, basket } => foods.iter().all(|f| on(f, basket)),
        }
    }

    /// Advances one tick: control (motion, grip), then disturbances.
    pub fn step(&mut self, control: &ControlInput) -> Vec<DisturbanceEvent> {
        self.tick += 1;
        let mut events = Vec::new();
        let was_clear = self.obstacles.is_empty() || self.clear_ahead();

        if let Some(target) = control.move_to {
            self.robot.position = target;
            if let Some(h) = &self.held {
                self.objects.get_mut(h).expect("held object exists").position = target;
            }
            let r = self.params.robot_radius_m;
            if self.obstacles.iter().any(|o| o.position.distance(target) < r + o.radius) {
                self.collided = true;
            }
        }
        if was_clear && !self.obstacles.is_empty() && !self.clear_ahead() {
            events.push(self.event(DisturbanceKind::ObstacleAhead));
        }

        match &control.grip {
            GripAction::None => {}
            GripAction::Attach(x) => self.attach(x, &mut events),
            GripAction::Release { object, onto } => {
                if self.held.as_ref() == Some(object) {
                    self.release(onto, &mut events);
                }
            }
        }

        let due: Vec<Injection> = self.injections.iter().filter(|i| i.tick == self.tick).cloned().collect();
        for inj in due {
            match inj.action {
                InjectAction::Drop => self.drop_held(&mut events),
                InjectAction::Topple(e) => {
                    if matches!(self.objects.get(&e).map(|o| &o.support), Some(Support::On(_))) {
                        let fell = self.cascade(&e);
                        events.push(self.event(DisturbanceKind::ToppleCascade(fell)));
                    }
                }
            }
        }
        if self.held.is_some() && self.rng.drop.bernoulli(self.params.drop_q) {
            self.drop_held(&mut events);
        }

        if cfg!(debug_assertions) {
            self.check_invariants();
        }
        events
    }

    fn event(&self, kind: DisturbanceKind) -> DisturbanceEvent {
        DisturbanceEvent { tick: self.tick, kind }
    }

    fn attach(&mut self, x: &Entity, events: &mut Vec<DisturbanceEvent>) {
        if self.held.is_some() {
            return;
        }
        match self.objects.get(x) {
            Some(o) if !o.kind.is_fixed() => {}
            _ => return,
        }
        if self.rng.pick.bernoulli(self.params.pick_fail_p1) {
            events.push(self.event(DisturbanceKind::PickFail(x.clone())));
            return;
        }
        // lifting a block out from under others brings them down
        let above = self.above(x);
        if !above.is_empty() {
            for a in &above {
                self.objects.get_mut(a).unwrap().support = Support::Table;
            }
            events.push(self.event(DisturbanceKind::ToppleCascade(above)));
        }
        let pos = self.robot.position;
        let o = self.objects.get_mut(x).unwrap();
        o.support = Support::Held;
        o.position = pos;
        self.held = Some(x.clone());
    }

    fn release(&mut self, onto: &Surface, events: &mut Vec<DisturbanceEvent>) {
        let x = self.held.take().expect("release with empty hand");
        match onto {
            Surface::Ground => {
                let pos = self.robot.position;
                let o = self.objects.get_mut(&x).unwrap();
                o.support = Support::Table;
                o.position = pos;
            }
            Surface::Object(y) => {
                let Some(target) = self.objects.get(y).cloned() else {
                    let pos = self.robot.position;
                    let o = self.objects.get_mut(&x).unwrap();
                    o.support = Support::Table;
                    o.position = pos;
                    return;
                };
                let n = self.params.place_noise_cm;
                let offset_cm = if n > 0.0 {
                    let r = self.rng.place_noise.uniform_in(0.0, n);
                    let (dx, dy) = self.rng.place_noise.unit_direction();
                    Point::new(dx, dy) * r
                } else {
                    Point::ORIGIN
                };
                let pos = target.position + offset_cm * 0.01;
                let topples = target.kind == ObjectKind::Block && offset_cm.norm() > self.params.topple_cm;
                let o = self.objects.get_mut(&x).unwrap();
                o.position = pos;
                o.support = if topples { Support::Table } else { Support::On(y.clone()) };
                if topples {
                    events.push(self.event(DisturbanceKind::ToppleCascade(vec![x])));
                }
            }
        }
    }

    fn drop_held(&mut self, events: &mut Vec<DisturbanceEvent>) {
        if let Some(x) = self.held.take() {
            let pos = self.robot.position;
            let o = self.objects.get_mut(&x).unwrap();
            o.support = Support::Table;
            o.position = pos;
            events.push(self.event(DisturbanceKind::Drop(x)));
        }
    }

    /// Moves `e` and everything above it to the table, where they lie.
    fn cascade(&mut self, e: &Entity) -> Vec<Entity> {
        let mut fell = vec![e.clone()];
        fell.extend(self.above(e));
        for f in &fell {
            self.objects.get_mut(f).unwrap().support = Support::Table;
        }
        fell
    }

    /// Panics if a structural invariant is broken.
    pub fn check_invariants(&self) {
        let held: Vec<&Entity> = self
            .objects
            .iter()
            .filter(|(_, o)| o.support == Support::Held)
            .map(|(k, _)| k)
            .collect();
        assert!(held.len() <= 1, "more than one object held: {held:?}");
        assert_eq!(held.first().copied(), self.held.as_ref(), "gripper and object table disagree");
        for (k, o) in &self.objects {
            if o.support != Support::Held {
                assert!(
                    self.stack_height(k).is_some(),
                    "support cycle or dangling support at {k}"
                );
            }
            if let Support::On(b) = &o.support {
                let below = &self.objects[b];
                if below.kind == ObjectKind::Block {
                    let off_cm = o.position.distance(below.position) * 100.0;
                    assert!(
                        off_cm <= self.params.topple_cm + 1e-9,
                        "{k} rests {off_cm:.3} cm off {b}, beyond the topple limit"
                    );
                }
            }
        }
    }
}

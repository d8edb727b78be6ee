use planwatch::config::SimConfig;
use planwatch::entity::Entity;
use planwatch::executive::{run_episode, EpisodeSpec, EpisodeTrace, Event, ExecutivePolicy};
use planwatch::planner::ScriptedPlanner;
use planwatch::trace::{format_trace, replay_text};
use planwatch::world::{InjectAction, Injection, TaskSpec};
use std::path::PathBuf;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against the checked-in file; `PLANWATCH_BLESS=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("PLANWATCH_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if expected != actual {
        let line = expected.lines().zip(actual.lines()).position(|(a, b)| a != b);
        panic!("{name} differs (first differing line {line:?}); rerun with PLANWATCH_BLESS=1 if intended");
    }
}

/// Six ticks after the fourth step starts in the undisturbed run.
const TOPPLE_TICK: u64 = 122;

/// Stack brown/red/green, red toppled a few ticks into placing the green block.
fn stack_topple() -> EpisodeTrace {
    let cfg = SimConfig::default();
    let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
    let policy = ExecutivePolicy::named("doremi", task.family, &cfg).unwrap();
    let inj = [Injection { tick: TOPPLE_TICK, action: InjectAction::Topple(Entity::block("red")) }];
    let spec = EpisodeSpec { task: &task, seed: 0, policy: &policy, cfg: &cfg, injections: &inj };
    run_episode(&spec, &mut ScriptedPlanner).unwrap()
}

#[test]
fn topple_happens_while_placing_green() {
    let t = stack_topple();
    let started = t
        .events
        .iter()
        .filter(|e| matches!(&e.event, Event::SkillStart { step } if step == "Place the green block on the red block"))
        .map(|e| e.tick)
        .next()
        .unwrap();
    assert!(started < TOPPLE_TICK);
    assert!(t.success());
}

#[test]
fn stack_topple_trace() {
    let text = format_trace(&stack_topple());
    check_golden("stack_topple.trace", &text);
    assert!(replay_text(&text, None).unwrap().is_identical());
}

#[test]
fn move_box_drop_trace() {
    let cfg = SimConfig::default();
    let task = TaskSpec::move_box(0.0, &cfg);
    let policy = ExecutivePolicy::named("doremi-ft", task.family, &cfg).unwrap();
    let inj = [Injection { tick: 300, action: InjectAction::Drop }];
    let spec = EpisodeSpec { task: &task, seed: 5, policy: &policy, cfg: &cfg, injections: &inj };
    let text = format_trace(&run_episode(&spec, &mut ScriptedPlanner).unwrap());
    check_golden("move_box_drop.trace", &text);
}

#[test]
fn plan_lines_of_the_stack_recovery() {
    let plans: Vec<String> = stack_topple()
        .events
        .iter()
        .filter_map(|e| match &e.event {
            Event::Plan { step, constraints } => Some(format!("{step} | {}", constraints.join("; "))),
            _ => None,
        })
        .collect();
    let expected = [
        "Pick the red block | the robot is holding red block",
        "Place the red block on the brown block | the red block is on the brown block",
        "Pick the green block | the robot is holding green block; the red block is on the brown block",
        "Place the green block on the red block | the red block is on the brown block; the green block is on the red block",
        "Put down the green block | ",
        "Pick the red block | the robot is holding red block",
        "Place the red block on the brown block | the red block is on the brown block",
        "Pick the green block | the robot is holding green block; the red block is on the brown block",
        "Place the green block on the red block | the red block is on the brown block; the green block is on the red block",
    ];
    assert_eq!(plans, expected);
}

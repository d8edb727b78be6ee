//! Write a trace file, replay it, then tamper with one line and replay again.

use planwatch::config::SimConfig;
use planwatch::executive::{run_episode, EpisodeSpec, ExecutivePolicy};
use planwatch::planner::ScriptedPlanner;
use planwatch::trace::{format_trace, replay_text};
use planwatch::world::{InjectAction, Injection, TaskSpec};

fn main() {
    let cfg = SimConfig::default();
    let task = TaskSpec::move_box(0.02, &cfg);
    let policy = ExecutivePolicy::named("doremi-ft", task.family, &cfg).unwrap();
    let inj = [Injection { tick: 250, action: InjectAction::Drop }];
    let spec = EpisodeSpec { task: &task, seed: 11, policy: &policy, cfg: &cfg, injections: &inj };
    let text = format_trace(&run_episode(&spec, &mut ScriptedPlanner).unwrap());

    let path = std::env::temp_dir().join("planwatch-example.trace");
    std::fs::write(&path, &text).unwrap();
    println!("wrote {} ({} lines)", path.display(), text.lines().count());

    let back = std::fs::read_to_string(&path).unwrap();
    println!("{}", replay_text(&back, None).unwrap());

    let tampered = back.replacen("\tSkillStart\tPick the box", "\tSkillStart\tPick the bowl", 1);
    println!("{}", replay_text(&tampered, None).unwrap());
}

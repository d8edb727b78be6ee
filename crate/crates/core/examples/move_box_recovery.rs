//! Carrying a box between tables with a drop part-way: recovering right away
//! versus noticing only at the end of the step.

use planwatch::config::SimConfig;
use planwatch::executive::{run_episode, EpisodeSpec, ExecutivePolicy};
use planwatch::planner::ScriptedPlanner;
use planwatch::world::{InjectAction, Injection, TaskSpec};

fn main() {
    let cfg = SimConfig::default();
    let task = TaskSpec::move_box(0.0, &cfg);
    let inj = [Injection { tick: 300, action: InjectAction::Drop }];
    for label in ["saycan", "im-oracle", "doremi"] {
        let policy = ExecutivePolicy::named(label, task.family, &cfg).unwrap();
        let spec = EpisodeSpec { task: &task, seed: 3, policy: &policy, cfg: &cfg, injections: &inj };
        let t = run_episode(&spec, &mut ScriptedPlanner).unwrap();
        println!("{label:>9}: {:<40} {:>6.2} s  plan: {}", t.outcome.to_string(), t.duration_s(), t.steps().join(" -> "));
    }
}

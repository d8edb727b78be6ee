//! Pick-and-place with a drop injected mid-transfer: the open-loop baseline
//! fails, the monitored executive aborts and picks the block up again.

use planwatch::config::SimConfig;
use planwatch::executive::{run_episode, EpisodeSpec, ExecutivePolicy};
use planwatch::planner::ScriptedPlanner;
use planwatch::trace::format_event;
use planwatch::world::{InjectAction, Injection, TaskSpec};

fn main() {
    let cfg = SimConfig::default();
    let task = TaskSpec::pick_place(0.0, &cfg);
    let inj = [Injection { tick: 40, action: InjectAction::Drop }];
    for label in ["saycan", "doremi"] {
        let policy = ExecutivePolicy::named(label, task.family, &cfg).unwrap();
        let spec = EpisodeSpec { task: &task, seed: 1, policy: &policy, cfg: &cfg, injections: &inj };
        let t = run_episode(&spec, &mut ScriptedPlanner).unwrap();
        println!("== {label}: {} after {:.2} s", t.outcome, t.duration_s());
        for e in t.events.iter().filter(|e| e.event.kind_name() != "Check") {
            println!("  {}", format_event(e, cfg.tps()));
        }
    }
}

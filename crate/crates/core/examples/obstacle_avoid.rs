//! Walking robot in a corridor with random obstacles: the detector's
//! "nothing ahead" constraint triggers sidesteps, the baselines walk into them.

use planwatch::config::SimConfig;
use planwatch::executive::{run_episode, EpisodeSpec, ExecutivePolicy};
use planwatch::harness::cell_key;
use planwatch::planner::ScriptedPlanner;
use planwatch::rng::episode_seed;
use planwatch::world::TaskSpec;

fn main() {
    let cfg = SimConfig::default();
    let task = TaskSpec::obstacle_avoid(0.6, &cfg);
    for label in ["saycan", "im", "doremi"] {
        let policy = ExecutivePolicy::named(label, task.family, &cfg).unwrap();
        let mut ok = 0;
        let mut steps = Vec::new();
        for i in 0..12 {
            let seed = episode_seed(1, &cell_key(&task), i);
            let spec = EpisodeSpec { task: &task, seed, policy: &policy, cfg: &cfg, injections: &[] };
            let t = run_episode(&spec, &mut ScriptedPlanner).unwrap();
            ok += u32::from(t.success());
            if i == 0 {
                steps = t.steps();
            }
        }
        println!("{label:>7}: {ok}/12 succeeded; first episode plan: {}", steps.join(" -> "));
    }
}

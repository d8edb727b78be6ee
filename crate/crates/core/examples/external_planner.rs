//! Planner and detector behind the TCP wire protocol. A scripted mock stands
//! in for the remote models. Its detector cannot see the world and answers a
//! fixed word, so an always-"Yes" peer misses the injected drop that the
//! in-process oracle catches.

use planwatch::config::SimConfig;
use planwatch::executive::{run_episode, run_episode_with, EpisodeSpec, ExecutivePolicy};
use planwatch::planner::ScriptedPlanner;
use planwatch::protocol::{ExternalDetector, ExternalPlanner, MockBehavior, MockServer};
use planwatch::world::{InjectAction, Injection, TaskSpec};

fn main() {
    let cfg = SimConfig::default();
    let server = MockServer::spawn(MockBehavior::Scripted { cfg: cfg.clone(), answer: "Yes".into() }).unwrap();
    println!("mock at {}", server.endpoint());

    let task = TaskSpec::pick_place(0.0, &cfg);
    let policy = ExecutivePolicy::named("doremi", task.family, &cfg).unwrap();
    let inj = [Injection { tick: 40, action: InjectAction::Drop }];
    let spec = EpisodeSpec { task: &task, seed: 2, policy: &policy, cfg: &cfg, injections: &inj };

    let remote = run_episode_with(
        &spec,
        &mut ExternalPlanner::new(server.endpoint()),
        &mut ExternalDetector::new(server.endpoint()),
    )
    .unwrap();
    let local = run_episode(&spec, &mut ScriptedPlanner).unwrap();
    println!("remote, always-Yes detector: {} in {:.2} s", remote.outcome, remote.duration_s());
    println!("local, oracle detector:      {} in {:.2} s", local.outcome, local.duration_s());
    println!("remote plan: {}", remote.steps().join(" -> "));
    println!("{} requests served", server.received.lock().unwrap().len());
}

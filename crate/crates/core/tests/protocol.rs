use planwatch::config::SimConfig;
use planwatch::constraint::{render_question, Constraint};
use planwatch::entity::Entity;
use planwatch::executive::{run_episode, run_episode_with, EpisodeSpec, ExecutivePolicy};
use planwatch::planner::{render_prompt, HistoryEntry, Outcome, Planner, PromptState, ScriptedPlanner};
use planwatch::protocol::*;
use planwatch::world::TaskSpec;
use std::time::Duration;

fn scripted_server(answer: &str) -> MockServer {
    MockServer::spawn(MockBehavior::Scripted { cfg: SimConfig::default(), answer: answer.into() }).unwrap()
}

#[test]
fn external_planner_matches_scripted_planner() {
    let cfg = SimConfig::default();
    let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
    let server = scripted_server("Yes");
    let mut ext = ExternalPlanner::new(server.endpoint());
    let mut prompt = PromptState::new(&task.instruction);
    // appendix steps (1)-(3) over three exchanges
    for _ in 0..3 {
        let local = ScriptedPlanner.plan_next(&prompt, &task).unwrap();
        let remote = ext.plan_next(&prompt, &task).unwrap();
        assert_eq!(remote.step, local.step);
        assert_eq!(remote.constraints, local.constraints);
        prompt.history.push(HistoryEntry {
            step: remote.step,
            constraints: remote.constraints,
            outcome: Outcome::Done,
            feedback: None,
        });
    }
    let text = render_prompt(&prompt);
    assert!(text.contains("(1) Pick the red block, [Constraint: The robot is holding red block],"), "{text}");
    assert!(text.contains("(3) Pick the green block,"), "{text}");
    assert!(text.ends_with("(4)"));
}

#[test]
fn request_document_has_exactly_the_documented_fields() {
    let server = MockServer::spawn(MockBehavior::Canned(vec![
        r#"{"step":"Pick the red block","constraints":["the robot is holding the red block"],"rationale":"r"}"#.into(),
    ]))
    .unwrap();
    let prompt = PromptState::new("Stack blocks in the order of brown, red, and green.");
    let d = external_plan_next(&server.endpoint(), &prompt, DEFAULT_TIMEOUT).unwrap();
    assert_eq!(d.step.text(), "Pick the red block");
    let got = server.received.lock().unwrap()[0].clone();
    let v: serde_json::Value = serde_json::from_str(&got).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["feedback", "history", "instruction"]);
    assert!(v["feedback"].is_null());
}

#[test]
fn unparseable_constraint_is_a_planner_failure() {
    let cfg = SimConfig::default();
    let server = MockServer::spawn(MockBehavior::Canned(vec![
        r#"{"step":"Pick the red block","constraints":["the moon is made of cheese"],"rationale":""}"#.into(),
    ]))
    .unwrap();
    let prompt = PromptState::new("x");
    let err = external_plan_next(&server.endpoint(), &prompt, DEFAULT_TIMEOUT).unwrap_err();
    assert!(matches!(err, ProtocolError::BadConstraint(_)));

    let task = TaskSpec::pick_place(0.0, &cfg);
    let policy = ExecutivePolicy::named("doremi", task.family, &cfg).unwrap();
    let spec = EpisodeSpec { task: &task, seed: 1, policy: &policy, cfg: &cfg, injections: &[] };
    let t = run_episode(&spec, &mut ExternalPlanner::new(server.endpoint())).unwrap();
    assert!(!t.success());
    assert!(t.outcome.to_string().contains("planner"));
}

#[test]
fn malformed_json_keeps_the_raw_payload() {
    let server = MockServer::spawn(MockBehavior::Canned(vec!["{not json".into()])).unwrap();
    match external_check(&server.endpoint(), &["q".into()], DEFAULT_TIMEOUT) {
        Err(ProtocolError::Malformed { raw, .. }) => assert_eq!(raw, "{not json"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn detector_answers() {
    let red = Entity::block("red");
    let qs: Vec<String> = [
        Constraint::Holding(red.clone()),
        Constraint::On(red.clone(), Entity::block("brown")),
        Constraint::ClearAhead,
    ]
    .iter()
    .map(render_question)
    .collect();
    let yes = scripted_server("Yes");
    assert_eq!(external_check(&yes.endpoint(), &qs, DEFAULT_TIMEOUT).unwrap(), vec![true, true, true]);

    let maybe = scripted_server("Maybe");
    assert!(matches!(external_check(&maybe.endpoint(), &qs, DEFAULT_TIMEOUT), Err(ProtocolError::BadAnswer(_))));

    let ordered = MockServer::spawn(MockBehavior::Canned(vec![r#"{"answers":["Yes","No","Yes"]}"#.into()])).unwrap();
    assert_eq!(external_check(&ordered.endpoint(), &qs, DEFAULT_TIMEOUT).unwrap(), vec![true, false, true]);

    let short = MockServer::spawn(MockBehavior::Canned(vec![r#"{"answers":["Yes"]}"#.into()])).unwrap();
    assert!(matches!(
        external_check(&short.endpoint(), &qs, DEFAULT_TIMEOUT),
        Err(ProtocolError::AnswerCount { expected: 3, got: 1 })
    ));
}

#[test]
fn silent_peer_times_out() {
    let server = MockServer::spawn(MockBehavior::Silent).unwrap();
    let err = external_check(&server.endpoint(), &["q".into()], Duration::from_millis(200)).unwrap_err();
    assert!(matches!(err, ProtocolError::Timeout), "{err:?}");
}

#[test]
fn whole_episode_over_the_wire() {
    let cfg = SimConfig::default();
    let task = TaskSpec::move_box(0.0, &cfg);
    let server = scripted_server("Yes");
    let policy = ExecutivePolicy::named("doremi", task.family, &cfg).unwrap();
    let spec = EpisodeSpec { task: &task, seed: 4, policy: &policy, cfg: &cfg, injections: &[] };
    let mut planner = ExternalPlanner::new(server.endpoint());
    let mut det = ExternalDetector::new(server.endpoint());
    let remote = run_episode_with(&spec, &mut planner, &mut det).unwrap();
    let local = run_episode(&spec, &mut ScriptedPlanner).unwrap();
    assert!(remote.success());
    assert_eq!(remote.steps(), local.steps());
    assert_eq!(remote.duration_ticks, local.duration_ticks);
}

//! Stack brown, red, green; topple the red block while the green one is being
//! placed, and print the planner transcript with the detector feedback line.

use planwatch::config::SimConfig;
use planwatch::entity::Entity;
use planwatch::executive::{run_episode, EpisodeSpec, Event, ExecutivePolicy};
use planwatch::planner::{render_prompt, PlanDecision, Planner, PlannerError, PromptState, ScriptedPlanner};
use planwatch::world::{InjectAction, Injection, TaskSpec};

/// Keeps the last prompt it was shown and what it answered.
struct Recording {
    inner: ScriptedPlanner,
    last: Option<(PromptState, PlanDecision)>,
}

impl Planner for Recording {
    fn plan_next(&mut self, prompt: &PromptState, task: &TaskSpec) -> Result<PlanDecision, PlannerError> {
        let d = self.inner.plan_next(prompt, task)?;
        self.last = Some((prompt.clone(), d.clone()));
        Ok(d)
    }

    fn name(&self) -> String {
        "recording".into()
    }
}

fn main() {
    let cfg = SimConfig::default();
    let task = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
    let policy = ExecutivePolicy::named("doremi", task.family, &cfg).unwrap();

    // find when step (4) starts in an undisturbed run, then topple shortly after
    let clean = run_episode(
        &EpisodeSpec { task: &task, seed: 0, policy: &policy, cfg: &cfg, injections: &[] },
        &mut ScriptedPlanner,
    )
    .unwrap();
    let start4 = clean
        .events
        .iter()
        .filter(|e| matches!(e.event, Event::SkillStart { .. }))
        .nth(3)
        .map(|e| e.tick)
        .unwrap();
    let inj = [Injection { tick: start4 + 6, action: InjectAction::Topple(Entity::block("red")) }];

    let mut planner = Recording { inner: ScriptedPlanner, last: None };
    let spec = EpisodeSpec { task: &task, seed: 0, policy: &policy, cfg: &cfg, injections: &inj };
    let trace = run_episode(&spec, &mut planner).unwrap();

    let (mut prompt, last) = planner.last.unwrap();
    prompt.consume_feedback();
    println!("{} {last},", render_prompt(&prompt));
    println!("\noutcome: {} in {:.2} s", trace.outcome, trace.duration_s());
}

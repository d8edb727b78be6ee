//! Fits timing knobs to the reported nominal durations and the arm's drop
//! exposure to the open-loop pick-and-place success rates.
//!
//! Everything is measured by running zero-disturbance episodes, so the fit
//! stays consistent with the controllers whatever their segment structure.

use crate::config::{ConfigError, SimConfig};
use crate::executive::{run_episode, EpisodeSpec, Event, ExecError, ExecutivePolicy};
use crate::planner::ScriptedPlanner;
use crate::world::TaskSpec;
use std::fmt::Write as _;

/// Nominal durations to reproduce, seconds.
pub const PICK_PLACE_S: f64 = 2.7;
pub const STACK_S: f64 = 7.2;
pub const OBSTACLE_S: f64 = 24.2;
pub const MOVE_BOX_S: f64 = 32.2;
/// Open-loop pick-and-place success (%) at drop rates 0.2 and 0.3.
pub const SAYCAN_TARGETS: [(f64, f64); 2] = [(0.2, 81.0), (0.3, 63.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub quantity: String,
    pub target: f64,
    pub fitted: f64,
}

#[derive(Clone, Debug)]
pub struct Fit {
    pub config: SimConfig,
    pub rows: Vec<FitRow>,
}

impl Fit {
    pub fn report(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{:<28} target {:>7.3}  fitted {:>7.3}", r.quantity, r.target, r.fitted);
        }
        s
    }
}

fn nominal(task: &TaskSpec, cfg: &SimConfig) -> Result<(u64, Vec<crate::executive::TraceEvent>), ExecError> {
    let policy = ExecutivePolicy::named("saycan", task.family, cfg)?;
    let spec = EpisodeSpec { task, seed: 0, policy: &policy, cfg, injections: &[] };
    let t = run_episode(&spec, &mut ScriptedPlanner)?;
    Ok((t.duration_ticks, t.events))
}

/// Nominal (undisturbed) episode duration in seconds.
pub fn nominal_s(task: &TaskSpec, cfg: &SimConfig) -> Result<f64, ExecError> {
    Ok(nominal(task, cfg)?.0 as f64 / f64::from(cfg.tps()))
}

/// Seconds the block is held in a nominal pick-and-place: from the grasp to
/// the release.
pub fn pick_place_exposure_s(cfg: &SimConfig) -> Result<f64, ExecError> {
    let (_, events) = nominal(&TaskSpec::pick_place(0.0, cfg), cfg)?;
    let armed: Vec<u64> =
        events.iter().filter(|e| matches!(e.event, Event::Armed { .. })).map(|e| e.tick).collect();
    match armed.as_slice() {
        [grasp, release, ..] => Ok((release - grasp) as f64 / f64::from(cfg.tps())),
        _ => Ok(0.0),
    }
}

/// Predicted open-loop success (%) given per-second drop rate `p`.
pub fn predicted_saycan(p: f64, exposure_s: f64) -> f64 {
    100.0 * (1.0 - p).powf(exposure_s)
}

fn exposure_error(exposure_s: f64) -> f64 {
    SAYCAN_TARGETS.iter().map(|(p, t)| (predicted_saycan(*p, exposure_s) - t).powi(2)).sum()
}

/// Smallest speed in `[lo, hi]` whose nominal duration is at most `ticks`
/// (duration is non-increasing in speed).
fn fit_speed(
    lo: f64,
    hi: f64,
    ticks: u64,
    mut duration: impl FnMut(f64) -> Result<u64, ExecError>,
) -> Result<Option<f64>, ExecError> {
    if duration(hi)? > ticks {
        return Ok(None);
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if duration(mid)? <= ticks {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((duration(hi)? == ticks).then_some(hi))
}

pub fn calibrate(base: &SimConfig) -> Result<Fit, ExecError> {
    base.validate()?;
    let mut cfg = base.clone();
    let tps = f64::from(cfg.tps());
    let target_ticks = |s: f64| (s * tps).round() as u64;

    // humanoid walking speed from the obstacle-free corridor
    let corridor = TaskSpec::obstacle_avoid(0.0, &cfg);
    let walk = fit_speed(0.05, 5.0, target_ticks(OBSTACLE_S), |v| {
        let mut c = cfg.clone();
        c.humanoid.walk_speed = v;
        Ok(nominal(&corridor, &c)?.0)
    })?
    .ok_or_else(|| invalid("humanoid.walk_speed", "no speed reproduces the corridor time"))?;
    cfg.humanoid.walk_speed = walk;

    // humanoid pick dwell from the move-box time
    let mb = TaskSpec::move_box(0.0, &cfg);
    let mut pick = None;
    for ticks in 1..=400u32 {
        let mut c = cfg.clone();
        c.humanoid.pick_s = f64::from(ticks) / tps;
        if nominal(&mb, &c)?.0 == target_ticks(MOVE_BOX_S) {
            pick = Some(c.humanoid.pick_s);
            break;
        }
    }
    cfg.humanoid.pick_s = pick.ok_or_else(|| invalid("humanoid.pick_s", "no dwell reproduces the move-box time"))?;

    // arm: lowering dwell (drop exposure) and retreat, with the speed fitted
    // to the pick-and-place time; keep combinations that also hit the stack time
    let pp = TaskSpec::pick_place(0.0, &cfg);
    let stack = TaskSpec::stack(&["brown", "red", "green"], 0.0, 0.0, &cfg);
    let mut best: Option<(f64, SimConfig)> = None;
    for lower in 1..=20u32 {
        for retreat in 0..=40u32 {
            let mut c = cfg.clone();
            c.arm.lower_s = f64::from(lower) / tps;
            c.arm.retreat_s = f64::from(retreat) / tps;
            let Some(v) = fit_speed(0.05, 5.0, target_ticks(PICK_PLACE_S), |v| {
                let mut c2 = c.clone();
                c2.arm.speed = v;
                Ok(nominal(&pp, &c2)?.0)
            })?
            else {
                continue;
            };
            c.arm.speed = v;
            if nominal(&stack, &c)?.0 != target_ticks(STACK_S) {
                continue;
            }
            let err = exposure_error(pick_place_exposure_s(&c)?);
            if best.as_ref().map_or(true, |(e, _)| err < *e - 1e-9) {
                best = Some((err, c));
            }
        }
    }
    let (_, fitted) = best.ok_or_else(|| invalid("arm", "no dwell/speed combination reproduces both arm times"))?;
    cfg = fitted;
    cfg.validate()?;

    let exposure = pick_place_exposure_s(&cfg)?;
    let mut rows = vec![
        FitRow { quantity: "pick-place nominal s".into(), target: PICK_PLACE_S, fitted: nominal_s(&pp, &cfg)? },
        FitRow { quantity: "stack nominal s".into(), target: STACK_S, fitted: nominal_s(&stack, &cfg)? },
        FitRow { quantity: "obstacle nominal s".into(), target: OBSTACLE_S, fitted: nominal_s(&corridor, &cfg)? },
        FitRow { quantity: "move-box nominal s".into(), target: MOVE_BOX_S, fitted: nominal_s(&mb, &cfg)? },
    ];
    for (p, t) in SAYCAN_TARGETS {
        rows.push(FitRow {
            quantity: format!("saycan pick-place p={p} %"),
            target: t,
            fitted: predicted_saycan(p, exposure),
        });
    }
    Ok(Fit { config: cfg, rows })
}

fn invalid(key: &str, reason: &str) -> ExecError {
    ExecError::Config(ConfigError::Invalid { key: key.into(), reason: reason.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_exposure_is_the_best_fit() {
        let cfg = SimConfig::default();
        let e = pick_place_exposure_s(&cfg).unwrap();
        assert!((e - 1.15).abs() < 1e-9, "{e}");
        // neighbours one tick either side fit worse
        assert!(exposure_error(e) < exposure_error(e - 0.05));
        assert!(exposure_error(e) < exposure_error(e + 0.05));
    }
}

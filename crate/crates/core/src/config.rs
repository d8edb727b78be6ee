//! Simulation and calibration knobs, read from a TOML file.
//!
//! Every key is optional; missing keys take the calibrated defaults below.
//! Durations are given in seconds and must be whole multiples of the tick.
//! `docs/config.md` lists every key.

use crate::geometry::Point;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config value `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown task family `{0}`")]
    UnknownFamily(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    /// Simulation ticks per second (dt_sim = 1 / ticks_per_second).
    pub ticks_per_second: u32,
    /// Detector check period in seconds.
    pub detector_period_s: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            ticks_per_second: 20,
            detector_period_s: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    /// End-effector speed, m/s.
    pub speed: f64,
    pub grasp_s: f64,
    /// Dwell between arriving over the receptacle and releasing (object held).
    pub lower_s: f64,
    /// Lift-off after a release.
    pub retreat_s: f64,
    /// Re-grasp of an object that is already held.
    pub regrasp_s: f64,
    /// Standstill after an abort before the recovery step starts.
    pub abort_halt_s: f64,
    pub home: Point,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            speed: 0.4,
            grasp_s: 0.3,
            lower_s: 0.25,
            retreat_s: 0.85,
            regrasp_s: 0.1,
            abort_halt_s: 0.0,
            home: Point::new(0.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanoidConfig {
    /// Walking speed, m/s.
    pub walk_speed: f64,
    pub pick_s: f64,
    /// Dwell while lowering an object before release (object held).
    pub lower_s: f64,
    pub retreat_s: f64,
    /// Re-grasp of a held object: one pick approach.
    pub regrasp_s: f64,
    /// Coming to a stop from walking after an abort.
    pub abort_halt_s: f64,
    pub turn_s: f64,
    /// Lateral displacement of a turn, m.
    pub sidestep_m: f64,
    pub move_at_speed_s: f64,
}

impl Default for HumanoidConfig {
    fn default() -> Self {
        Self {
            walk_speed: 10.0 / 24.2,
            pick_s: 2.4,
            lower_s: 0.7,
            retreat_s: 0.3,
            regrasp_s: 2.4,
            abort_halt_s: 2.0,
            turn_s: 1.0,
            sidestep_m: 0.6,
            move_at_speed_s: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub block_size_cm: f64,
    /// Largest horizontal offset (cm) at which a block stays on the block below.
    pub topple_cm: f64,
    pub sense_range_m: f64,
    pub robot_radius_m: f64,
    pub obstacle_radius_m: f64,
    pub corridor_length_m: f64,
    pub corridor_width_m: f64,
    /// Expected path-blocking obstacles per unit density.
    pub obstacle_rate: f64,
    pub obstacle_x_min_m: f64,
    pub obstacle_x_max_m: f64,
    /// Tolerance of the `At` predicate, m.
    pub at_tolerance_m: f64,
    /// How close to its destination a delivered box must be, m.
    pub delivery_tolerance_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            block_size_cm: 4.0,
            topple_cm: 1.6,
            sense_range_m: 0.8,
            robot_radius_m: 0.2,
            obstacle_radius_m: 0.2,
            corridor_length_m: 10.0,
            corridor_width_m: 2.0,
            obstacle_rate: 1.3,
            obstacle_x_min_m: 1.0,
            obstacle_x_max_m: 9.5,
            at_tolerance_m: 0.25,
            delivery_tolerance_m: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PickPlaceLayout {
    pub block: Point,
    pub fixture: Point,
}

impl Default for PickPlaceLayout {
    fn default() -> Self {
        Self {
            block: Point::new(0.5, 0.0),
            fixture: Point::new(0.5, 0.36),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackLayout {
    /// Table slots; the i-th block of the requested order starts in slot i.
    pub slots: Vec<Point>,
}

impl Default for StackLayout {
    fn default() -> Self {
        Self {
            slots: vec![Point::new(0.55, 0.0), Point::new(0.55, -0.45), Point::new(0.55, 0.45)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoveBoxLayout {
    pub start: Point,
    pub table_a: Point,
    pub table_b: Point,
}

impl Default for MoveBoxLayout {
    fn default() -> Self {
        Self {
            start: Point::new(0.0, 0.0),
            table_a: Point::new(3.0, 0.0),
            table_b: Point::new(3.0, 9.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareFoodLayout {
    pub basket: Point,
    /// Foods are scattered with distance to the basket in [ring_min_m, ring_max_m].
    pub ring_min_m: f64,
    pub ring_max_m: f64,
    /// Foods the instruction asks for, in delivery order.
    pub foods: Vec<String>,
    /// Extra foods lying around that are not part of the task.
    pub distractors: Vec<String>,
}

impl Default for PrepareFoodLayout {
    fn default() -> Self {
        Self {
            basket: Point::new(0.0, 0.0),
            ring_min_m: 1.5,
            ring_max_m: 2.5,
            foods: vec!["apple".into(), "banana".into()],
            distractors: vec!["bread".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub pick_place: PickPlaceLayout,
    pub stack: StackLayout,
    pub move_box: MoveBoxLayout,
    pub prepare_food: PrepareFoodLayout,
    pub palette: Palette,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Palette(pub Vec<String>);

impl Default for Palette {
    fn default() -> Self {
        Self(
            ["red", "green", "blue", "yellow", "brown", "purple", "orange", "gray"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeoutConfig {
    pub arm_s: f64,
    pub humanoid_s: f64,
}

impl Default for TimeoutConfig {
    fn default() -> Self {
        Self {
            arm_s: 20.0,
            humanoid_s: 120.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutiveConfig {
    /// Simulated time consumed by each planner call.
    pub replan_latency_s: f64,
    /// Consecutive violated reports needed before aborting.
    pub confirmation_k: u32,
    /// Delay between a detector query and its answer.
    pub query_latency_s: f64,
}

impl Default for ExecutiveConfig {
    fn default() -> Self {
        Self {
            replan_latency_s: 0.0,
            confirmation_k: 1,
            query_latency_s: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Execution time is reported only for cells whose success rate reaches this.
    pub time_threshold_pct: f64,
    pub seeds: Vec<u64>,
    pub episodes_per_seed: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            time_threshold_pct: 80.0,
            seeds: vec![1, 2, 3, 4],
            episodes_per_seed: 12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub time: TimeConfig,
    pub arm: ArmConfig,
    pub humanoid: HumanoidConfig,
    pub geometry: GeometryConfig,
    pub layout: LayoutConfig,
    pub timeouts: TimeoutConfig,
    pub executive: ExecutiveConfig,
    pub harness: HarnessConfig,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// Short stable fingerprint of the full configuration, stored in trace headers.
    pub fn digest(&self) -> String {
        format!("{:016x}", crate::rng::fnv1a64(&self.to_toml_string()))
    }

    pub fn tps(&self) -> u32 {
        self.time.ticks_per_second
    }

    /// Converts a validated duration to ticks.
    pub fn ticks(&self, seconds: f64) -> u32 {
        (seconds * f64::from(self.tps())).round() as u32
    }

    pub fn detector_period_ticks(&self) -> u32 {
        self.ticks(self.time.detector_period_s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let tps = self.time.ticks_per_second;
        if tps == 0 || 1000 % tps != 0 {
            return Err(invalid("time.ticks_per_second", "must divide 1000"));
        }
        let whole = |key: &str, s: f64, allow_zero: bool| -> Result<(), ConfigError> {
            if !s.is_finite() || s < 0.0 || (!allow_zero && s == 0.0) {
                return Err(invalid(key, format!("{s} is not a valid duration")));
            }
            let t = s * f64::from(tps);
            if (t - t.round()).abs() > 1e-6 {
                return Err(invalid(key, format!("{s} s is not a whole number of ticks")));
            }
            Ok(())
        };
        whole("time.detector_period_s", self.time.detector_period_s, false)?;
        whole("arm.grasp_s", self.arm.grasp_s, true)?;
        whole("arm.lower_s", self.arm.lower_s, false)?;
        whole("arm.retreat_s", self.arm.retreat_s, true)?;
        whole("arm.regrasp_s", self.arm.regrasp_s, false)?;
        whole("humanoid.pick_s", self.humanoid.pick_s, true)?;
        whole("humanoid.lower_s", self.humanoid.lower_s, false)?;
        whole("humanoid.retreat_s", self.humanoid.retreat_s, true)?;
        whole("humanoid.regrasp_s", self.humanoid.regrasp_s, false)?;
        whole("humanoid.turn_s", self.humanoid.turn_s, false)?;
        whole("humanoid.move_at_speed_s", self.humanoid.move_at_speed_s, false)?;
        whole("timeouts.arm_s", self.timeouts.arm_s, false)?;
        whole("timeouts.humanoid_s", self.timeouts.humanoid_s, false)?;
        whole("executive.replan_latency_s", self.executive.replan_latency_s, true)?;
        whole("arm.abort_halt_s", self.arm.abort_halt_s, true)?;
        whole("humanoid.abort_halt_s", self.humanoid.abort_halt_s, true)?;
        whole("executive.query_latency_s", self.executive.query_latency_s, true)?;
        for (key, v) in [
            ("arm.speed", self.arm.speed),
            ("humanoid.walk_speed", self.humanoid.walk_speed),
            ("geometry.sense_range_m", self.geometry.sense_range_m),
            ("geometry.corridor_length_m", self.geometry.corridor_length_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.geometry.topple_cm < 0.0 {
            return Err(invalid("geometry.topple_cm", "must be non-negative"));
        }
        if self.executive.confirmation_k == 0 {
            return Err(invalid("executive.confirmation_k", "must be at least 1"));
        }
        if self.layout.stack.slots.len() < 2 {
            return Err(invalid("layout.stack.slots", "need at least two slots"));
        }
        let food = &self.layout.prepare_food;
        if food.foods.is_empty() {
            return Err(invalid("layout.prepare_food.foods", "need at least one food"));
        }
        let mut names: Vec<&String> = food.foods.iter().chain(&food.distractors).collect();
        names.sort();
        names.dedup();
        if names.len() != food.foods.len() + food.distractors.len() {
            return Err(invalid("layout.prepare_food", "food names must be unique"));
        }
        if !(food.ring_min_m > 0.0 && food.ring_min_m < food.ring_max_m) {
            return Err(invalid("layout.prepare_food", "need 0 < ring_min_m < ring_max_m"));
        }
        if self.geometry.obstacle_x_min_m >= self.geometry.obstacle_x_max_m {
            return Err(invalid("geometry.obstacle_x_min_m", "must be below obstacle_x_max_m"));
        }
        if self.harness.time_threshold_pct < 0.0 || self.harness.time_threshold_pct > 100.0 {
            return Err(invalid("harness.time_threshold_pct", "must be within [0, 100]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.detector_period_ticks(), 4);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = SimConfig::from_toml_str("[geometry]\ntopple_cm = 2.0\n").unwrap();
        assert_eq!(cfg.geometry.topple_cm, 2.0);
        assert_eq!(cfg.arm, ArmConfig::default());
    }

    #[test]
    fn rejects_fractional_tick_durations_and_unknown_keys() {
        assert!(SimConfig::from_toml_str("[arm]\ngrasp_s = 0.33\n").is_err());
        assert!(SimConfig::from_toml_str("[arm]\nbogus = 1\n").is_err());
        assert!(SimConfig::from_toml_str("[executive]\nconfirmation_k = 0\n").is_err());
    }
}

//! The constraint detector: periodic yes/no answers about active constraints.
//!
//! The positive class is "constraint satisfied". A noisy model reports
//! "satisfied" with probability `tpr` when the constraint holds and with
//! probability `fpr_missed` when it does not, independently per constraint
//! per check.

use crate::config::{ConfigError, SimConfig};
use crate::constraint::{Constraint, PredicateKind};
use crate::rng::Stream;
use crate::world::{EvalError, Family, WorldState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// P(report satisfied | satisfied).
    pub tpr: f64,
    /// P(report satisfied | violated).
    pub fpr_missed: f64,
}

impl Rates {
    pub const ORACLE: Rates = Rates { tpr: 1.0, fpr_missed: 0.0 };

    pub fn is_oracle(&self) -> bool {
        *self == Rates::ORACLE
    }
}

/// Confusion-matrix counts, positive class = satisfied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u32,
    pub fn_: u32,
    pub fp: u32,
    pub tn: u32,
}

pub fn model_from_counts(tp: u32, fn_: u32, fp: u32, tn: u32) -> Result<Rates, ConfigError> {
    if tp + fn_ == 0 || fp + tn == 0 {
        return Err(ConfigError::Invalid {
            key: "detector counts".into(),
            reason: format!("({tp}, {fn_}, {fp}, {tn}) leaves a rate undefined"),
        });
    }
    Ok(Rates {
        tpr: f64::from(tp) / f64::from(tp + fn_),
        fpr_missed: f64::from(fp) / f64::from(fp + tn),
    })
}

/// Measured vision-language detector accuracy on the walking-robot tasks,
/// before and after fine-tuning.
pub fn preset_counts(family: Family, finetuned: bool) -> Option<Counts> {
    let c = |tp, fn_, fp, tn| Some(Counts { tp, fn_, fp, tn });
    match (family, finetuned) {
        (Family::ObstacleAvoid, false) => c(120, 5, 0, 14),
        (Family::ObstacleAvoid, true) => c(121, 4, 0, 14),
        (Family::MoveBox, false) => c(140, 0, 6, 22),
        (Family::MoveBox, true) => c(140, 0, 2, 26),
        (Family::PrepareFood, false) => c(78, 27, 8, 25),
        (Family::PrepareFood, true) => c(99, 6, 1, 32),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub name: String,
    /// Predicate kinds without an entry are answered exactly.
    pub rates: BTreeMap<PredicateKind, Rates>,
    pub period_ticks: u32,
    pub confirmation_k: u32,
}

impl DetectorModel {
    pub fn oracle(cfg: &SimConfig) -> Self {
        Self {
            name: "oracle".into(),
            rates: BTreeMap::new(),
            period_ticks: cfg.detector_period_ticks(),
            confirmation_k: cfg.executive.confirmation_k,
        }
    }

    /// Same rates for every predicate kind.
    pub fn uniform(name: &str, rates: Rates, cfg: &SimConfig) -> Self {
        let mut m = Self::oracle(cfg);
        m.name = name.to_string();
        if !rates.is_oracle() {
            m.rates = PredicateKind::ALL.iter().map(|k| (*k, rates)).collect();
        }
        m
    }

    /// The measured preset for `family`, or the oracle where none exists.
    pub fn preset(family: Family, finetuned: bool, cfg: &SimConfig) -> Self {
        match preset_counts(family, finetuned) {
            Some(c) => {
                let rates = model_from_counts(c.tp, c.fn_, c.fp, c.tn).expect("preset counts are valid");
                let tag = if finetuned { "after" } else { "before" };
                Self::uniform(&format!("{family}-{tag}"), rates, cfg)
            }
            None => Self::oracle(cfg),
        }
    }

    pub fn is_oracle(&self) -> bool {
        self.rates.values().all(Rates::is_oracle)
    }

    pub fn rates_for(&self, kind: PredicateKind) -> Rates {
        self.rates.get(&kind).copied().unwrap_or(Rates::ORACLE)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::Invalid { key: format!("detector {}", self.name), reason };
        for (k, r) in &self.rates {
            if !(0.0..=1.0).contains(&r.tpr) || !(0.0..=1.0).contains(&r.fpr_missed) {
                return Err(bad(format!("{k:?} rates outside [0, 1]")));
            }
        }
        if self.period_ticks == 0 {
            return Err(bad("check period must be at least one tick".into()));
        }
        if self.confirmation_k == 0 {
            return Err(bad("confirmation_k must be at least 1".into()));
        }
        Ok(())
    }

    /// One report for a constraint whose ground truth is `truth`.
    ///
    /// Exact kinds consume no randomness; noisy kinds draw exactly once.
    pub fn report(&self, kind: PredicateKind, truth: bool, rng: &mut Stream) -> bool {
        let r = self.rates_for(kind);
        if r.is_oracle() {
            return truth;
        }
        let u = rng.uniform();
        if truth {
            u < r.tpr
        } else {
            u < r.fpr_missed
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub tick: u64,
    pub constraint: Constraint,
    pub truth: bool,
    pub reported: bool,
}

/// Queries every constraint once, in order.
pub fn check_all(
    model: &DetectorModel,
    constraints: &[Constraint],
    world: &WorldState,
    rng: &mut Stream,
) -> Result<Vec<CheckRecord>, EvalError> {
    constraints
        .iter()
        .map(|c| {
            let truth = world.evaluate_predicate(c)?;
            Ok(CheckRecord {
                tick: world.tick,
                constraint: c.clone(),
                truth,
                reported: model.report(c.kind(), truth, rng),
            })
        })
        .collect()
}

/// Tracks consecutive "violated" reports per constraint within one step.
#[derive(Clone, Debug, Default)]
pub struct Confirmation {
    streaks: BTreeMap<Constraint, u32>,
}

impl Confirmation {
    /// Feeds one round of reports; returns the constraints whose streak
    /// reached `k` this round.
    pub fn update(&mut self, records: &[CheckRecord], k: u32) -> Vec<Constraint> {
        let mut confirmed = Vec::new();
        for r in records {
            let s = self.streaks.entry(r.constraint.clone()).or_insert(0);
            if r.reported {
                *s = 0;
            } else {
                *s += 1;
                if *s >= k {
                    confirmed.push(r.constraint.clone());
                }
            }
        }
        confirmed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_to_rates() {
        let r = model_from_counts(140, 0, 6, 22).unwrap();
        assert_eq!(r.tpr, 1.0);
        assert!((r.fpr_missed - 0.214).abs() < 1e-3);
        let r = model_from_counts(99, 6, 1, 32).unwrap();
        assert!((r.tpr - 0.943).abs() < 1e-3);
        assert!((r.fpr_missed - 0.030).abs() < 1e-3);
        assert_eq!(model_from_counts(1, 0, 0, 1).unwrap(), Rates::ORACLE);
        assert!(model_from_counts(0, 0, 1, 1).is_err());
        assert!(model_from_counts(1, 1, 0, 0).is_err());
    }

    #[test]
    fn oracle_draws_nothing() {
        let cfg = SimConfig::default();
        let m = DetectorModel::oracle(&cfg);
        let mut a = Stream::new(1, "detector");
        let b = a.clone();
        assert!(m.report(PredicateKind::On, true, &mut a));
        assert!(!m.report(PredicateKind::On, false, &mut a));
        assert_eq!(a.clone().uniform(), b.clone().uniform());
    }

    #[test]
    fn confirmation_needs_consecutive_reports() {
        let c = Constraint::ClearAhead;
        let rec = |reported| CheckRecord { tick: 0, constraint: c.clone(), truth: true, reported };
        let mut conf = Confirmation::default();
        assert!(conf.update(&[rec(false)], 2).is_empty());
        assert!(conf.update(&[rec(true)], 2).is_empty());
        assert!(conf.update(&[rec(false)], 2).is_empty());
        assert_eq!(conf.update(&[rec(false)], 2), vec![c.clone()]);
        let mut conf = Confirmation::default();
        assert_eq!(conf.update(&[rec(false)], 1), vec![c]);
    }

    #[test]
    fn presets_exist_for_walking_tasks_only() {
        let cfg = SimConfig::default();
        assert!(DetectorModel::preset(Family::StackInOrder, false, &cfg).is_oracle());
        assert!(!DetectorModel::preset(Family::PrepareFood, false, &cfg).is_oracle());
        assert_eq!(DetectorModel::preset(Family::PrepareFood, true, &cfg).name, "prepare-food-after");
    }
}

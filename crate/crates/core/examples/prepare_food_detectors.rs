//! Detector quality matters: the same executive with confusion-matrix rates
//! measured before and after fine-tuning, on the food-preparation task.

use planwatch::config::SimConfig;
use planwatch::detector::{model_from_counts, preset_counts};
use planwatch::harness::{run_experiment, summarize, ExperimentConfig};
use planwatch::world::{Family, TaskSpec};

fn main() {
    for tuned in [false, true] {
        let c = preset_counts(Family::PrepareFood, tuned).unwrap();
        let r = model_from_counts(c.tp, c.fn_, c.fp, c.tn).unwrap();
        println!("finetuned={tuned}: tpr {:.3}, missed-violation rate {:.3}", r.tpr, r.fpr_missed);
    }
    let cfg = SimConfig::default();
    let mut exp = ExperimentConfig::new(vec![TaskSpec::prepare_food(0.1, 0.04, &cfg)], cfg);
    exp.policies = Some(vec!["saycan".into(), "doremi".into(), "doremi-ft".into()]);
    exp.seeds = vec![1, 2];
    exp.episodes_per_seed = 6;
    print!("{}", summarize(&run_experiment(&exp).unwrap().cells));
}

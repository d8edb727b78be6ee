//! A small experiment grid: per-cell success and time, as CSV and as a table.

use planwatch::config::SimConfig;
use planwatch::harness::{csv_string, run_experiment, summarize, ExperimentConfig};

fn main() {
    let cfg = SimConfig::default();
    let mut exp = ExperimentConfig::named("pick-place", cfg).unwrap();
    exp.seeds = vec![1, 2];
    exp.episodes_per_seed = 6;
    let res = run_experiment(&exp).unwrap();
    print!("{}", summarize(&res.cells));
    println!();
    print!("{}", csv_string(&res.cells).unwrap());
}

//! Refit the timing knobs and the arm's drop exposure from scratch.

use planwatch::calibrate::{calibrate, predicted_saycan, pick_place_exposure_s};
use planwatch::config::SimConfig;

fn main() {
    let fit = calibrate(&SimConfig::default()).unwrap();
    print!("{}", fit.report());
    let e = pick_place_exposure_s(&fit.config).unwrap();
    println!("block held for {e:.2} s per pick-and-place");
    for p in [0.1, 0.2, 0.3, 0.4] {
        println!("  p={p}: open-loop success {:.1}%", predicted_saycan(p, e));
    }
}

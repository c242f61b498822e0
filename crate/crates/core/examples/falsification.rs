// Timepoint agnosticism test on control-only panels with and without a
// shift in outcomes between the two timepoints.

use rollmatch::prelude::*;
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec};

pub fn run_example() -> Result<()> {
    for gamma in [0.0, 0.25, 0.5] {
        let study = generate_scenario(&ScenarioSpec::new(Scenario::AppendixC, 5).with_gamma(gamma))?;
        let result = timepoint_test(&study.dataset, &FalsifySpec::new(1, 2, 999, 17))?;
        println!(
            "gamma {gamma:<4}: statistic {:+.4}  p = {:.3}  ({} pairs)",
            result.statistic, result.p_value, result.n_pairs
        );
    }
    let study = generate_scenario(&ScenarioSpec::new(Scenario::Linear, 5))?;
    for r in timepoint_scan(&study.dataset, &FalsifySpec::new(1, 2, 999, 17), &[])? {
        println!("scan {} vs {}: p = {:.3}", r.t0, r.t1, r.p_value);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

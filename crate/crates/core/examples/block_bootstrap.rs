// Percentile interval from resampling whole trajectories, with the
// replicate spread compared across seeds.

use rollmatch::prelude::*;
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec};

pub fn run_example() -> Result<()> {
    let study = generate_scenario(&ScenarioSpec::new(Scenario::LinearCorrelated, 3))?;
    let data = &study.dataset;
    let design = match_instance_replacement(data, &DistanceSpec::default(), 2)?;
    let model = fit_mu0(data, 1)?;
    let att = att_bias_corrected(data, &design, &model)?;
    println!("estimate {:.4} from {} trajectories", att.estimate, att.contributions.len());
    for seed in [1, 2, 3] {
        let ci = block_bootstrap(&att, &BootstrapSpec::new(1000, 0.05, seed))?;
        println!(
            "seed {seed}: 95% CI [{:.4}, {:.4}]  se {:.4}",
            ci.ci_lo, ci.ci_hi, ci.std_error
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

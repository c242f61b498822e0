// Difference in means versus the regression-adjusted estimator on a
// simulated study where treated units differ from controls.

use rollmatch::prelude::*;
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec};

pub fn run_example() -> Result<()> {
    let study = generate_scenario(&ScenarioSpec::new(Scenario::Linear, 11))?;
    let data = &study.dataset;
    println!(
        "{} treated, {} controls, {} candidate control instances",
        data.n_treated(),
        data.n_control(),
        data.eligible_controls().len()
    );
    let design = match_instance_replacement(data, &DistanceSpec::default(), 2)?;
    let model = fit_mu0(data, 1)?;
    let raw = att_diff_means(data, &design)?;
    let adjusted = att_bias_corrected(data, &design, &model)?;
    println!("true effect            {:.4}", study.truth.effect);
    println!("difference in means    {:.4}", raw.estimate);
    println!("bias corrected         {:.4}", adjusted.estimate);
    println!(
        "contribution identity  {:.2e}",
        (adjusted.contribution_mean() - adjusted.estimate).abs()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

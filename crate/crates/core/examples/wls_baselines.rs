// Matching-weighted least squares with three variance estimators next to
// the block bootstrap, on errors that are correlated within trajectories.

use rollmatch::prelude::*;
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec};

pub fn run_example() -> Result<()> {
    let study = generate_scenario(&ScenarioSpec::new(Scenario::LinearCorrelated, 21))?;
    let data = &study.dataset;
    let design = match_instance_replacement(data, &DistanceSpec::default(), 2)?;
    for variance in [WlsVariance::Naive, WlsVariance::Corrected, WlsVariance::Cluster] {
        let r = wls_att(data, &design, variance, 0.05)?;
        println!(
            "{:<10} {:.4}  [{:.4}, {:.4}]  length {:.4}",
            format!("{variance:?}"),
            r.estimate,
            r.ci_lo,
            r.ci_hi,
            r.ci_length()
        );
    }
    let att = att_bias_corrected(data, &design, &fit_mu0(data, 1)?)?;
    let boot = block_bootstrap(&att, &BootstrapSpec::new(500, 0.05, 1))?;
    println!(
        "{:<10} {:.4}  [{:.4}, {:.4}]  length {:.4}",
        "Bootstrap",
        boot.estimate,
        boot.ci_lo,
        boot.ci_hi,
        boot.ci_length()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

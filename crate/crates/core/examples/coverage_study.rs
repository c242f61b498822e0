// Monte Carlo coverage of the bootstrap and WLS intervals.
//
// `cargo run --release --example coverage_study -- nonlinear_correlated 1000`

use rollmatch::simlab::{render_table, run_coverage_experiment, CoverageConfig, Method, Scenario, ScenarioSpec};
use rollmatch::Result;

pub fn run_example() -> Result<()> {
    run_with(Scenario::Linear, 40)
}

fn run_with(scenario: Scenario, reps: usize) -> Result<()> {
    let mut config = CoverageConfig::new(reps, 200);
    config.methods = vec![Method::Wls, Method::WlsCorrected, Method::WlsCluster, Method::Bootstrap];
    let report = run_coverage_experiment(&ScenarioSpec::new(scenario, 2024), &config)?;
    print!("{}", render_table(&report));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = match args.next() {
        Some(s) => s.parse()?,
        None => Scenario::Linear,
    };
    let reps = args.next().and_then(|r| r.parse().ok()).unwrap_or(200);
    run_with(scenario, reps)
}

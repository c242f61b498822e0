// Standardized mean differences before and after matching, written as CSV.

use rollmatch::design::write_balance_csv;
use rollmatch::prelude::*;
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec};

pub fn run_example() -> Result<()> {
    let study = generate_scenario(&ScenarioSpec::new(Scenario::Linear, 8))?;
    let data = &study.dataset;
    let design = match_instance_replacement(data, &DistanceSpec::default(), 2)?;
    let rows = balance_table(data, &design)?;
    write_balance_csv(&rows, std::io::stdout().lock())?;
    let worst = rows
        .iter()
        .map(|r| r.std_diff_matched.abs())
        .fold(0.0, f64::max);
    eprintln!("largest matched |std diff|: {worst:.3}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

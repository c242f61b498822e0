// Difference-in-differences when treated subjects carry a persistent
// outcome offset that the covariates do not explain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rollmatch::panel::{Instance, Trajectory};
use rollmatch::prelude::*;

const EFFECT: f64 = 0.5;

fn panel(seed: u64) -> Result<PanelDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::new();
    for i in 0..600 {
        let treated = i < 150;
        let entry = if treated { rng.random_range(2..=4) } else { i64::MAX };
        let offset = if treated { 1.0 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal);
        let mut x: f64 = rng.sample(StandardNormal);
        let mut instances = Vec::new();
        for t in 1..=4.min(entry) {
            if t > 1 {
                x += 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
            let z = u32::from(t == entry);
            let y = offset + 2.0 * x + EFFECT * f64::from(z) + 0.2 * rng.sample::<f64, _>(StandardNormal);
            instances.push(Instance {
                time: t,
                z,
                outcome: y,
                covariates: vec![x],
            });
        }
        trajectories.push(Trajectory::new(format!("s{i:03}"), instances)?);
    }
    let mut config = StudyConfig::new(1, 1, vec!["x".into()]);
    config.did = true;
    PanelDataset::new(trajectories, config)
}

pub fn run_example() -> Result<()> {
    let data = panel(4)?;
    let design = match_instance_replacement(&data, &DistanceSpec::default(), 1)?;
    let model = fit_mu0(&data, 1)?;
    let level = att_bias_corrected(&data, &design, &model)?;
    let did = att_did(&data, &design, &model)?;
    let ci = block_bootstrap(&did, &BootstrapSpec::new(1000, 0.05, 9))?;
    println!("true effect     {EFFECT:.3}");
    println!("bias corrected  {:.3}", level.estimate);
    println!("did             {:.3}  [{:.3}, {:.3}]", did.estimate, ci.ci_lo, ci.ci_hi);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

// Two treated batters and two control batters observed at two timepoints,
// matched one-to-one under each of the three designs.
//
// Run with `cargo run --example figure_one`.

use rollmatch::prelude::*;

const PANEL: &str = "\
id,time,z,outcome,obp
T1,1,0,0.250,0.250
T1,2,1,0.300,0.300
T2,1,1,0.305,0.305
C1,1,0,0.302,0.302
C1,2,0,0.310,0.310
C2,1,0,0.315,0.315
C2,2,0,0.340,0.340
";

pub fn run_example() -> Result<()> {
    let config = StudyConfig::new(1, 1, vec!["obp".into()]);
    let data = PanelDataset::from_csv_reader(PANEL.as_bytes(), config)?;
    let spec = DistanceSpec::euclidean();
    for variant in [
        Variant::InstanceReplacement,
        Variant::TrajectoryReplacement,
        Variant::WithoutReplacement,
    ] {
        let options = MatchOptions {
            variant,
            distance: spec.clone(),
            controls_per_treated: 1,
            allow_drop: false,
        };
        let design = build_design(&data, &options)?;
        println!("{variant:?}: total distance {:.3}", design.total_distance);
        for set in &design.matched_sets {
            let c = &set.controls[0];
            println!(
                "  {}@{} <- {}@{}  (|d| = {:.3})",
                set.treated.id, set.treated.time, c.instance.id, c.instance.time, c.distance
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rollmatch::design::{build_design, MatchOptions, MatchedDesign, Variant};
use rollmatch::distance::DistanceSpec;
use rollmatch::panel::{PanelDataset, StudyConfig};

use common::{check_design, random_panel, Problem};

fn options(variant: Variant, c: usize) -> MatchOptions {
    MatchOptions {
        variant,
        distance: DistanceSpec::euclidean(),
        controls_per_treated: c,
        allow_drop: false,
    }
}

fn design(data: &PanelDataset, variant: Variant, c: usize) -> MatchedDesign {
    build_design(data, &options(variant, c)).unwrap()
}

const FIGURE_ONE: &str = "\
id,time,z,outcome,obp
T1,1,0,0.250,0.250
T1,2,1,0.300,0.300
T2,1,1,0.305,0.305
C1,1,0,0.302,0.302
C1,2,0,0.310,0.310
C2,1,0,0.315,0.315
C2,2,0,0.340,0.340
";

fn figure_one() -> PanelDataset {
    PanelDataset::from_csv_reader(FIGURE_ONE.as_bytes(), StudyConfig::new(1, 1, vec!["obp".into()])).unwrap()
}

fn pairs(design: &MatchedDesign) -> Vec<(String, String, i64)> {
    design
        .matched_sets
        .iter()
        .map(|s| (s.treated.id.clone(), s.controls[0].instance.id.clone(), s.controls[0].instance.time))
        .collect()
}

#[test]
fn figure_one_instance_replacement_reuses_one_instance() {
    let d = design(&figure_one(), Variant::InstanceReplacement, 1);
    assert_eq!(pairs(&d), [("T1".into(), "C1".into(), 1), ("T2".into(), "C1".into(), 1)]);
    assert_eq!(d.total_cost, 5000);
}

#[test]
fn figure_one_trajectory_replacement_uses_both_times() {
    let d = design(&figure_one(), Variant::TrajectoryReplacement, 1);
    assert_eq!(pairs(&d), [("T1".into(), "C1".into(), 1), ("T2".into(), "C1".into(), 2)]);
    assert_eq!(d.total_cost, 7000);
}

#[test]
fn figure_one_without_replacement_uses_both_trajectories() {
    let d = design(&figure_one(), Variant::WithoutReplacement, 1);
    assert_eq!(pairs(&d), [("T1".into(), "C1".into(), 1), ("T2".into(), "C2".into(), 1)]);
    assert_eq!(d.total_cost, 12000);
}

#[test]
fn treated_pseudo_instances_are_never_controls() {
    for variant in [Variant::InstanceReplacement, Variant::TrajectoryReplacement, Variant::WithoutReplacement] {
        let d = design(&figure_one(), variant, 1);
        assert!(d.matched_sets.iter().all(|s| s.controls.iter().all(|m| !m.instance.id.starts_with('T'))));
    }
}

#[test]
fn two_by_two_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 200 {
        let data = random_panel(&mut rng, 2, 4, 2, false);
        if data.n_control() != 2 {
            continue;
        }
        let problem = Problem::new(&data, 1, None);
        for variant in [Variant::InstanceReplacement, Variant::TrajectoryReplacement, Variant::WithoutReplacement] {
            match (problem.optimum(variant), build_design(&data, &options(variant, 1))) {
                (Some(best), Ok(d)) => assert_eq!(d.total_cost, best, "{variant:?}"),
                (None, Err(e)) => assert!(e.is_infeasible()),
                (a, b) => panic!("{variant:?}: oracle {a:?}, solver {b:?}"),
            }
        }
        checked += 1;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn restrictions_never_lower_cost(seed in any::<u64>(), n_treated in 1usize..5, c in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_panel(&mut rng, n_treated, 0, n_treated * c, false);
        let data = PanelDataset::new(data.trajectories().to_vec(), StudyConfig::new(1, c, vec!["a".into(), "b".into()])).unwrap();
        let ir = design(&data, Variant::InstanceReplacement, c);
        let tr = design(&data, Variant::TrajectoryReplacement, c);
        let wo = design(&data, Variant::WithoutReplacement, c);
        for d in [&ir, &tr, &wo] {
            prop_assert!(check_design(&data, d).is_ok(), "{:?}", check_design(&data, d));
            d.validate(&data).unwrap();
        }
        prop_assert!(ir.total_cost <= tr.total_cost);
        prop_assert!(tr.total_cost <= wo.total_cost);
    }

    #[test]
    fn instance_replacement_ignores_input_order(seed in any::<u64>(), n_treated in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_panel(&mut rng, n_treated, 10, 2, true);
        let a = design(&data, Variant::InstanceReplacement, 1);
        let mut shuffled = data.trajectories().to_vec();
        shuffled.shuffle(&mut rng);
        let shuffled = PanelDataset::new(shuffled, data.config().clone()).unwrap();
        let b = design(&shuffled, Variant::InstanceReplacement, 1);
        let key = |d: &MatchedDesign| {
            let mut v = pairs(d);
            v.sort();
            v
        };
        prop_assert_eq!(key(&a), key(&b));
        prop_assert_eq!(a.total_cost, b.total_cost);
    }

    #[test]
    fn design_json_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_panel(&mut rng, 3, 8, 3, false);
        let d = design(&data, Variant::TrajectoryReplacement, 1);
        let back: MatchedDesign = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        prop_assert_eq!(back, d);
    }
}

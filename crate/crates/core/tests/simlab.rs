use rollmatch::design::match_instance_replacement;
use rollmatch::distance::DistanceSpec;
use rollmatch::estimate::{att_bias_corrected, ConditionalMean};
use rollmatch::simlab::{generate_scenario, Scenario, ScenarioSpec, SimulatedStudy};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    cov / (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() * b.iter().map(|y| (y - mb).powi(2)).sum::<f64>()).sqrt()
}

fn large(scenario: Scenario, n_treated: usize, n_control: usize, seed: u64) -> SimulatedStudy {
    let mut spec = ScenarioSpec::new(scenario, seed);
    spec.n_treated = n_treated;
    spec.n_control = n_control;
    generate_scenario(&spec).unwrap()
}

#[test]
fn treated_covariate_shift_and_timing() {
    let n = 20_000;
    let study = large(Scenario::Linear, n, 10, 11);
    let treated: Vec<_> = study.dataset.trajectories().iter().filter(|t| t.is_treated()).collect();
    assert_eq!(treated.len(), n);
    let se = 1.0 / (n as f64).sqrt();
    let shift = [0.0, 0.25, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0];
    for (j, s) in shift.iter().enumerate() {
        let col: Vec<f64> = treated.iter().map(|t| t.instances[0].covariates[j]).collect();
        assert!((mean(&col) - s).abs() < 4.0 * se, "x{}: {}", j + 1, mean(&col));
    }
    for time in 1..=3 {
        let share = treated.iter().filter(|t| t.treatment_time == Some(time)).count() as f64 / n as f64;
        let se = (2.0 / 9.0 / n as f64).sqrt();
        assert!((share - 1.0 / 3.0).abs() < 4.0 * se, "time {time}: {share}");
    }
}

#[test]
fn control_covariates_fixed_or_walking() {
    let n = 20_000;
    let study = large(Scenario::Linear, 1, n, 12);
    let controls: Vec<_> = study.dataset.trajectories().iter().filter(|t| !t.is_treated()).collect();
    for t in &controls {
        assert_eq!(t.instances.len(), 3);
        for inst in &t.instances[1..] {
            assert_eq!(inst.covariates[..4], t.instances[0].covariates[..4]);
        }
    }
    for j in 4..8 {
        let third: Vec<f64> = controls.iter().map(|t| t.instances[2].covariates[j]).collect();
        let v = var(&third);
        let se = 1.5 * (2.0 / n as f64).sqrt();
        assert!((v - 1.5).abs() < 4.0 * se, "x{} variance {v}", j + 1);
    }
}

#[test]
fn correlated_errors_within_trajectory() {
    let study = large(Scenario::LinearCorrelated, 1, 20_000, 13);
    let model = study.truth.oracle_model().unwrap();
    let residuals = |k: usize| -> Vec<f64> {
        study
            .dataset
            .trajectories()
            .iter()
            .filter(|t| !t.is_treated())
            .map(|t| t.instances[k].outcome - model.predict(&t.instances[k].covariates))
            .collect()
    };
    let (e1, e2, e3) = (residuals(0), residuals(1), residuals(2));
    for (a, b) in [(&e1, &e2), (&e1, &e3), (&e2, &e3)] {
        let r = corr(a, b);
        assert!((r - 0.8).abs() < 0.02, "correlation {r}");
    }
    assert!((var(&e1) - 1.0).abs() < 0.05);

    let independent = large(Scenario::Linear, 1, 20_000, 14);
    let model = independent.truth.oracle_model().unwrap();
    let res: Vec<(f64, f64)> = independent
        .dataset
        .trajectories()
        .iter()
        .filter(|t| !t.is_treated())
        .map(|t| {
            let r = |k: usize| t.instances[k].outcome - model.predict(&t.instances[k].covariates);
            (r(0), r(1))
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = res.into_iter().unzip();
    assert!(corr(&a, &b).abs() < 0.03);
}

#[test]
fn oracle_adjustment_is_unbiased_without_effect() {
    let reps = 60;
    let estimates: Vec<f64> = (0..reps)
        .map(|r| {
            let mut spec = ScenarioSpec::new(Scenario::Linear, 500 + r);
            spec.effect = 0.0;
            let study = generate_scenario(&spec).unwrap();
            let design = match_instance_replacement(&study.dataset, &DistanceSpec::default(), 2).unwrap();
            let model = study.truth.oracle_model().unwrap();
            assert_eq!(study.truth.sample_att(), 0.0);
            att_bias_corrected(&study.dataset, &design, &model).unwrap().estimate
        })
        .collect();
    let se = (var(&estimates) / reps as f64).sqrt();
    assert!(mean(&estimates).abs() < 4.0 * se, "mean {} se {se}", mean(&estimates));
}

#[test]
fn appendix_c_trend() {
    let trend = |gamma: f64, seed: u64| -> (f64, f64) {
        let mut spec = ScenarioSpec::new(Scenario::AppendixC, seed).with_gamma(gamma);
        spec.n_control = 20_000;
        let study = generate_scenario(&spec).unwrap();
        let diffs: Vec<f64> = study
            .dataset
            .trajectories()
            .iter()
            .map(|t| {
                assert_eq!(t.instances.len(), 2);
                t.instances[1].outcome - t.instances[0].outcome
            })
            .collect();
        (mean(&diffs), (var(&diffs) / diffs.len() as f64).sqrt())
    };
    let (d, se) = trend(0.0, 15);
    assert!(d.abs() < 4.0 * se, "gamma 0 difference {d}");
    let (d, se) = trend(0.25, 16);
    assert!((d - 0.25).abs() < 4.0 * se, "gamma 0.25 difference {d}");
}

#[test]
fn appendix_c_oracle_fits_controls() {
    let mut spec = ScenarioSpec::new(Scenario::AppendixC, 17);
    spec.n_control = 20_000;
    let study = generate_scenario(&spec).unwrap();
    let model = study.truth.oracle_model().unwrap();
    let residuals: Vec<f64> = study
        .dataset
        .trajectories()
        .iter()
        .flat_map(|t| t.instances.iter().map(|i| i.outcome - model.predict(&i.covariates)))
        .collect();
    assert!(mean(&residuals).abs() < 0.03);
    assert!((var(&residuals) - 1.0).abs() < 0.04);
}

//! Permutation test of timepoint agnosticism using control-control matches.
//!
//! Control trajectories are split at random into two disjoint halves. The
//! first half supplies pseudo-treated instances at one timepoint, the second
//! half pseudo-controls at the other. After 1-1 optimal matching the
//! residualized pair differences are sign-flipped to form the null
//! distribution of their mean.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::quantize;
use crate::distance::{fit_scaling, transformed_distance, DistanceSpec, Metric, Scaling};
use crate::error::{Error, Result};
use crate::estimate::{ConditionalMean, OutcomeModel};
use crate::flow::assignment;
use crate::panel::{InstanceRef, PanelDataset};
use crate::rng::stream_rng;

fn default_split() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifySpec {
    pub t0: i64,
    pub t1: i64,
    /// Number of sign-flip draws `B`.
    pub permutations: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caliper: Option<f64>,
    /// Share of control trajectories assigned to the pseudo-treated half.
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub keep_draws: bool,
}

impl FalsifySpec {
    pub fn new(t0: i64, t1: i64, permutations: usize, seed: u64) -> Self {
        Self {
            t0,
            t1,
            permutations,
            seed,
            caliper: None,
            split_fraction: 0.5,
            metric: Metric::Mahalanobis,
            keep_draws: false,
        }
    }

    pub fn validate(&self, dataset: &PanelDataset) -> Result<()> {
        let l = dataset.config().lag as i64;
        if self.t0 == self.t1 {
            return Err(Error::Config("t0 and t1 must differ".into()));
        }
        if self.t0 < l || self.t1 < l {
            return Err(Error::Config(format!(
                "timepoints must be at least the lag {l}, got t0 = {}, t1 = {}",
                self.t0, self.t1
            )));
        }
        if self.permutations == 0 {
            return Err(Error::Config("at least one permutation is required".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        self.distance_spec().validate()
    }

    fn distance_spec(&self) -> DistanceSpec {
        DistanceSpec {
            metric: self.metric,
            caliper: self.caliper,
            ..DistanceSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Control timepoint of the pseudo-controls.
    pub t0: i64,
    /// Reference timepoint of the pseudo-treated instances (the smaller group).
    pub t1: i64,
    /// Mean residualized pair difference.
    pub statistic: f64,
    pub p_value: f64,
    pub n_pairs: usize,
    pub permutations: usize,
    /// Pairs removed because no partner lay within the caliper.
    pub dropped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
}

struct Side {
    refs: Vec<InstanceRef>,
    histories: Vec<Vec<f64>>,
}

fn side(dataset: &PanelDataset, refs: Vec<InstanceRef>) -> Result<Side> {
    let histories = refs
        .iter()
        .map(|r| dataset.history(r.trajectory, r.time))
        .collect::<Result<_>>()?;
    Ok(Side { refs, histories })
}

/// Residualized pair differences after the split and 1-1 match.
struct PairTable {
    t0: i64,
    t1: i64,
    diffs: Vec<f64>,
    dropped: usize,
}

fn pair_table(dataset: &PanelDataset, spec: &FalsifySpec) -> Result<PairTable> {
    spec.validate(dataset)?;
    let eligible = dataset.eligible_controls();
    let count = |t: i64| eligible.iter().filter(|r| r.time == t).count();
    let (t0, t1) = if count(spec.t0) < count(spec.t1) {
        (spec.t1, spec.t0)
    } else {
        (spec.t0, spec.t1)
    };

    let mut trajectories: Vec<usize> = eligible.iter().map(|r| r.trajectory).collect();
    trajectories.dedup();
    let mut rng = stream_rng(spec.seed, 0);
    trajectories.shuffle(&mut rng);
    let n1 = (trajectories.len() as f64 * spec.split_fraction).floor() as usize;
    let mut in_first = vec![false; dataset.trajectories().len()];
    for &t in &trajectories[..n1] {
        in_first[t] = true;
    }

    let treated = side(
        dataset,
        eligible
            .iter()
            .copied()
            .filter(|r| r.time == t1 && in_first[r.trajectory])
            .collect(),
    )?;
    let controls = side(
        dataset,
        eligible
            .iter()
            .copied()
            .filter(|r| r.time == t0 && !in_first[r.trajectory])
            .collect(),
    )?;
    if treated.refs.len() < 2 || controls.refs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "fewer than 2 pairs possible: {} instances at t1 = {t1}, {} at t0 = {t0}",
            treated.refs.len(),
            controls.refs.len()
        )));
    }

    let control_y: Vec<f64> = controls
        .refs
        .iter()
        .map(|&r| dataset.outcome(r).expect("eligible instance exists"))
        .collect();
    let model = OutcomeModel::fit(&controls.histories, &control_y, dataset.config().lag)?;

    let dspec = spec.distance_spec();
    let scaling = if spec.metric == Metric::Euclidean {
        Scaling::identity(dataset.history_len())
    } else {
        let mut pool = treated.histories.clone();
        pool.extend(controls.histories.iter().cloned());
        fit_scaling(&pool, &dspec)?
    };
    let tx: Vec<Vec<f64>> = treated.histories.iter().map(|h| scaling.transform(h)).collect();
    let cx: Vec<Vec<f64>> = controls.histories.iter().map(|h| scaling.transform(h)).collect();
    let (rows, cols) = (tx.len(), cx.len());
    let costs: Vec<Option<i64>> = tx
        .par_iter()
        .flat_map_iter(|a| {
            cx.iter().map(|b| {
                let d = transformed_distance(a, b);
                dspec.admits(d).then(|| quantize(d))
            })
        })
        .collect();
    let solution = assignment(&costs, rows, cols);

    let residual = |side: &Side, i: usize| {
        dataset.outcome(side.refs[i]).expect("eligible instance exists") - model.predict(&side.histories[i])
    };
    let mut diffs = Vec::new();
    for (i, j) in solution.row_to_col.iter().enumerate() {
        if let Some(j) = *j {
            diffs.push(residual(&treated, i) - residual(&controls, j));
        }
    }
    let possible = rows.min(cols);
    if diffs.is_empty() {
        return Err(Error::Degenerate("caliper leaves zero pairs".into()));
    }
    if diffs.len() < 2 {
        return Err(Error::Degenerate("fewer than 2 matched pairs".into()));
    }
    Ok(PairTable {
        t0,
        t1,
        dropped: possible - diffs.len(),
        diffs,
    })
}

fn sign_flip_mean(diffs: &[f64], rng: &mut impl Rng) -> f64 {
    let mut sum = 0.0;
    for chunk in diffs.chunks(64) {
        let bits: u64 = rng.random();
        for (k, d) in chunk.iter().enumerate() {
            if bits >> k & 1 == 1 {
                sum += d;
            } else {
                sum -= d;
            }
        }
    }
    sum / diffs.len() as f64
}

/// Runs the split, match and sign-flip test for one pair of timepoints.
pub fn timepoint_test(dataset: &PanelDataset, spec: &FalsifySpec) -> Result<TestResult> {
    let table = pair_table(dataset, spec)?;
    let n = table.diffs.len();
    let statistic = table.diffs.iter().sum::<f64>() / n as f64;
    let draws: Vec<f64> = (0..spec.permutations)
        .into_par_iter()
        .map(|b| sign_flip_mean(&table.diffs, &mut stream_rng(spec.seed, b as u64 + 1)))
        .collect();
    // Exact ties under sign flips reach the observed value only up to rounding.
    let scale = table.diffs.iter().fold(1.0f64, |m, d| m.max(d.abs()));
    let tie = 1e-12 * scale;
    let extreme = draws.iter().filter(|d| d.abs() + tie >= statistic.abs()).count();
    Ok(TestResult {
        t0: table.t0,
        t1: table.t1,
        statistic,
        p_value: (1 + extreme) as f64 / (spec.permutations + 1) as f64,
        n_pairs: n,
        permutations: spec.permutations,
        dropped: table.dropped,
        draws: spec.keep_draws.then_some(draws),
    })
}

/// Tests every consecutive pair of the given timepoints (or of all control
/// timepoints when `times` is empty) and reports each result separately.
pub fn timepoint_scan(dataset: &PanelDataset, template: &FalsifySpec, times: &[i64]) -> Result<Vec<TestResult>> {
    let mut times = times.to_vec();
    if times.is_empty() {
        times = dataset.eligible_controls().iter().map(|r| r.time).collect();
    }
    times.sort_unstable();
    times.dedup();
    times
        .windows(2)
        .map(|w| {
            let spec = FalsifySpec {
                t0: w[0],
                t1: w[1],
                ..template.clone()
            };
            timepoint_test(dataset, &spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Instance, StudyConfig, Trajectory};
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    /// Controls with two timepoints, covariates redrawn at each, `y = f(x) + effect·1{t=2} + noise`.
    fn panel(n: usize, effect: f64, noise: f64, seed: u64) -> PanelDataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let trajectories = (0..n)
            .map(|i| {
                let instances = (1..=2)
                    .map(|t| {
                        let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
                        let e: f64 = rng.sample(StandardNormal);
                        Instance {
                            time: t,
                            z: 0,
                            outcome: 1.0 + x[0] - 0.5 * x[1] + effect * f64::from(u8::from(t == 2)) + noise * e,
                            covariates: x,
                        }
                    })
                    .collect();
                Trajectory::new(format!("c{i:04}"), instances).unwrap()
            })
            .collect();
        PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["a".into(), "b".into()])).unwrap()
    }

    fn shift(dataset: &PanelDataset, f: impl Fn(&[f64]) -> f64) -> PanelDataset {
        let trajectories = dataset
            .trajectories()
            .iter()
            .map(|t| {
                let instances = t
                    .instances
                    .iter()
                    .map(|i| Instance {
                        outcome: i.outcome + f(&i.covariates),
                        ..i.clone()
                    })
                    .collect();
                Trajectory::new(t.id.clone(), instances).unwrap()
            })
            .collect();
        PanelDataset::new(trajectories, dataset.config().clone()).unwrap()
    }

    #[test]
    fn exact_model_gives_zero_statistic() {
        let d = panel(40, 0.0, 0.0, 1);
        let r = timepoint_test(&d, &FalsifySpec::new(1, 2, 199, 5)).unwrap();
        assert!(r.statistic.abs() < 1e-10);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_pairs, 20);
    }

    #[test]
    fn p_value_bounds_and_determinism() {
        let d = panel(60, 0.0, 1.0, 2);
        let spec = FalsifySpec::new(1, 2, 99, 11);
        let a = timepoint_test(&d, &spec).unwrap();
        assert!(a.p_value >= 1.0 / 100.0 && a.p_value <= 1.0);
        assert_eq!(a, timepoint_test(&d, &spec).unwrap());
    }

    #[test]
    fn strong_trend_is_detected() {
        let d = panel(200, 2.0, 0.5, 3);
        let r = timepoint_test(&d, &FalsifySpec::new(1, 2, 199, 4)).unwrap();
        assert!((r.statistic - 2.0).abs() < 0.3, "{}", r.statistic);
        assert_eq!(r.p_value, 1.0 / 200.0);
    }

    #[test]
    fn invariant_to_linear_shift_of_history() {
        let d = panel(80, 0.3, 1.0, 4);
        let shifted = shift(&d, |x| 3.0 * x[0] - 2.0 * x[1] + 7.0);
        let spec = FalsifySpec::new(1, 2, 499, 9);
        let a = timepoint_test(&d, &spec).unwrap();
        let b = timepoint_test(&shifted, &spec).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert!((a.statistic - b.statistic).abs() < 1e-9);
    }

    #[test]
    fn permutation_distribution_is_symmetric() {
        let d = panel(100, 0.0, 1.0, 5);
        let mut spec = FalsifySpec::new(1, 2, 20000, 3);
        spec.keep_draws = true;
        let draws = timepoint_test(&d, &spec).unwrap().draws.unwrap();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let skew = draws.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
        assert!(skew.abs() < 0.05, "{skew}");
    }

    #[test]
    fn caliper_and_spec_errors() {
        let d = panel(40, 0.0, 1.0, 6);
        let mut spec = FalsifySpec::new(1, 2, 99, 1);
        spec.caliper = Some(1e-9);
        assert!(matches!(timepoint_test(&d, &spec), Err(Error::Degenerate(m)) if m.contains("zero pairs")));
        assert!(FalsifySpec::new(1, 1, 99, 1).validate(&d).is_err());
        assert!(FalsifySpec::new(0, 1, 99, 1).validate(&d).is_err());
        let tiny = panel(3, 0.0, 1.0, 6);
        assert!(timepoint_test(&tiny, &FalsifySpec::new(1, 2, 99, 1)).is_err());
    }

    #[test]
    fn scan_covers_consecutive_pairs() {
        let d = panel(60, 0.0, 1.0, 7);
        let results = timepoint_scan(&d, &FalsifySpec::new(0, 0, 99, 1), &[]).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!((results[0].t0, results[0].t1), (1, 2));
    }
}

//! Simulated rolling-enrollment studies and Monte Carlo drivers.
//!
//! The main scenarios have 400 treated and 600 control subjects with eight
//! covariates. Four covariates are fixed per subject. For controls the other
//! four follow a three-step random walk. The falsification scenario has 1000
//! controls observed at two timepoints and an optional time trend `gamma`.

use std::fmt::Write as _;

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, MatchOptions, Variant};
use crate::distance::DistanceSpec;
use crate::error::{Error, Result};
use crate::estimate::{att_bias_corrected, fit_mu0, OutcomeModel};
use crate::falsify::{timepoint_test, FalsifySpec};
use crate::inference::{block_bootstrap, wls_att, BootstrapSpec, InferenceResult, WlsVariance};
use crate::panel::{Instance, PanelDataset, StudyConfig, Trajectory};
use crate::rng::{derive_seed, stream_rng};

const A_L: f64 = 0.223_143_551_314_209_76; // ln 1.25
const A_M: f64 = std::f64::consts::LN_2;
const A_H: f64 = 1.386_294_361_119_890_6; // ln 4
const A_VH: f64 = std::f64::consts::LN_10;

/// Standard deviation of each random-walk step.
pub const WALK_STEP_SD: f64 = 0.5;
/// Within-trajectory error correlation of the correlated scenarios.
pub const ERROR_CORRELATION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Linear,
    LinearCorrelated,
    NonlinearCorrelated,
    /// Controls only, two timepoints, for the falsification test.
    AppendixC,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::LinearCorrelated => "linear_correlated",
            Scenario::NonlinearCorrelated => "nonlinear_correlated",
            Scenario::AppendixC => "appendix_c",
        }
    }

    fn correlated(self) -> bool {
        matches!(self, Scenario::LinearCorrelated | Scenario::NonlinearCorrelated)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "linear" => Ok(Scenario::Linear),
            "linear_correlated" => Ok(Scenario::LinearCorrelated),
            "nonlinear_correlated" => Ok(Scenario::NonlinearCorrelated),
            "appendix_c" => Ok(Scenario::AppendixC),
            _ => Err(Error::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_treated: usize,
    pub n_control: usize,
    /// Time trend added at the second timepoint of the falsification scenario.
    #[serde(default)]
    pub gamma: f64,
    /// True treatment effect.
    pub effect: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let (n_treated, n_control) = match scenario {
            Scenario::AppendixC => (0, 1000),
            _ => (400, 600),
        };
        Self {
            scenario,
            n_treated,
            n_control,
            gamma: 0.0,
            effect: 0.25,
            seed,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

/// Both potential outcomes of one simulated treated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatedTruth {
    pub id: String,
    pub time: i64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: Scenario,
    pub effect: f64,
    pub treated: Vec<TreatedTruth>,
}

impl Truth {
    /// Mean of `y1 - y0` over the simulated treated instances.
    pub fn sample_att(&self) -> f64 {
        self.treated.iter().map(|t| t.y1 - t.y0).sum::<f64>() / self.treated.len() as f64
    }

    /// The true control mean function when it is linear in the covariates.
    pub fn oracle_model(&self) -> Option<OutcomeModel> {
        match self.scenario {
            Scenario::Linear | Scenario::LinearCorrelated => Some(OutcomeModel::from_coefficients(
                1,
                0.0,
                vec![A_L, A_L, A_L, A_L, A_VH, A_M, A_H, A_M],
            )),
            Scenario::AppendixC => Some(OutcomeModel::from_coefficients(
                1,
                0.0,
                vec![A_H, 0.0, A_VH, A_H + A_VH],
            )),
            Scenario::NonlinearCorrelated => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedStudy {
    pub dataset: PanelDataset,
    pub truth: Truth,
}

pub fn covariate_names(scenario: Scenario) -> Vec<String> {
    let k = if scenario == Scenario::AppendixC { 4 } else { 8 };
    (1..=k).map(|j| format!("x{j}")).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn mean_outcome(scenario: Scenario, x: &[f64]) -> f64 {
    let x2 = if scenario == Scenario::NonlinearCorrelated { x[1] * x[1] } else { x[1] };
    A_L * (x[0] + x2 + x[2] + x[3]) + A_VH * x[4] + A_M * (x[5] + x[7]) + A_H * x[6]
}

/// Draws one simulated study with its oracle record.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<SimulatedStudy> {
    let mut rng = stream_rng(spec.seed, 0);
    let names = covariate_names(spec.scenario);
    let mut trajectories = Vec::with_capacity(spec.n_treated + spec.n_control);
    let mut truth = Truth {
        scenario: spec.scenario,
        effect: spec.effect,
        treated: Vec::with_capacity(spec.n_treated),
    };
    let step = Normal::new(0.0, WALK_STEP_SD).expect("valid sd");

    if spec.scenario == Scenario::AppendixC {
        for i in 0..spec.n_control {
            let x3 = normal(&mut rng);
            let x4 = normal(&mut rng);
            let mut fixed = [x3, x4];
            let mut instances = Vec::with_capacity(2);
            for t in 1..=2 {
                if t == 2 {
                    fixed[0] += step.sample(&mut rng);
                    fixed[1] += step.sample(&mut rng);
                }
                let x = vec![normal(&mut rng), normal(&mut rng), fixed[0], fixed[1]];
                let trend = if t == 2 { spec.gamma } else { 0.0 };
                let y = A_H * (x[0] + x[3]) + A_VH * (x[2] + x[3]) + trend + normal(&mut rng);
                instances.push(Instance {
                    time: t,
                    z: 0,
                    outcome: y,
                    covariates: x,
                });
            }
            trajectories.push(Trajectory::new(format!("c{i:05}"), instances)?);
        }
        let dataset = PanelDataset::new(trajectories, StudyConfig::new(1, 1, names))?;
        return Ok(SimulatedStudy { dataset, truth });
    }

    for i in 0..spec.n_treated {
        let time = rng.random_range(1..=3i64);
        let mut x: Vec<f64> = (0..8).map(|_| normal(&mut rng)).collect();
        x[1] += 0.25;
        x[5] += 0.5;
        let y0 = mean_outcome(spec.scenario, &x) + normal(&mut rng);
        let y1 = y0 + spec.effect;
        let id = format!("t{i:05}");
        truth.treated.push(TreatedTruth {
            id: id.clone(),
            time,
            y0,
            y1,
        });
        let inst = Instance {
            time,
            z: 1,
            outcome: y1,
            covariates: x,
        };
        trajectories.push(Trajectory::new(id, vec![inst])?);
    }

    let (shared, own) = (ERROR_CORRELATION.sqrt(), (1.0 - ERROR_CORRELATION).sqrt());
    for i in 0..spec.n_control {
        let mut x: Vec<f64> = (0..8).map(|_| normal(&mut rng)).collect();
        let u = normal(&mut rng);
        let mut instances = Vec::with_capacity(3);
        for t in 1..=3 {
            if t > 1 {
                for xj in &mut x[4..] {
                    *xj += step.sample(&mut rng);
                }
            }
            let eps = if spec.scenario.correlated() {
                shared * u + own * normal(&mut rng)
            } else {
                normal(&mut rng)
            };
            instances.push(Instance {
                time: t,
                z: 0,
                outcome: mean_outcome(spec.scenario, &x) + eps,
                covariates: x.clone(),
            });
        }
        trajectories.push(Trajectory::new(format!("c{i:05}"), instances)?);
    }
    let dataset = PanelDataset::new(trajectories, StudyConfig::new(1, 2, names))?;
    Ok(SimulatedStudy { dataset, truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bootstrap,
    /// Weighted least squares with the textbook `σ²(X'WX)⁻¹` variance.
    Wls,
    WlsCluster,
    WlsCorrected,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Bootstrap => "Bootstrap Bias Corrected",
            Method::Wls => "WLS",
            Method::WlsCluster => "WLS Cluster",
            Method::WlsCorrected => "WLS Corrected",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "bootstrap" => Ok(Method::Bootstrap),
            "wls" => Ok(Method::Wls),
            "wls_cluster" => Ok(Method::WlsCluster),
            "wls_corrected" => Ok(Method::WlsCorrected),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub reps: usize,
    pub methods: Vec<Method>,
    pub bootstrap_replicates: usize,
    pub alpha: f64,
    pub matching: MatchOptions,
    /// Use the true control mean function instead of a fitted one.
    #[serde(default)]
    pub oracle_mu0: bool,
}

impl CoverageConfig {
    pub fn new(reps: usize, bootstrap_replicates: usize) -> Self {
        Self {
            reps,
            methods: vec![Method::Wls, Method::WlsCluster, Method::Bootstrap],
            bootstrap_replicates,
            alpha: 0.05,
            matching: MatchOptions {
                variant: Variant::InstanceReplacement,
                distance: DistanceSpec::default(),
                controls_per_treated: 2,
                allow_drop: false,
            },
            oracle_mu0: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_ci_length: f64,
    pub ci_length_se: f64,
    pub mean_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub gamma: f64,
    pub rate: f64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub replicates: usize,
    /// Replicates that raised an error and were excluded.
    pub failed: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejection: Vec<RejectionRate>,
}

fn rate_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn one_coverage_replicate(spec: &ScenarioSpec, config: &CoverageConfig) -> Result<Vec<InferenceResult>> {
    let study = generate_scenario(spec)?;
    let data = &study.dataset;
    let design = build_design(data, &config.matching)?;
    let model = if config.oracle_mu0 {
        study
            .truth
            .oracle_model()
            .ok_or_else(|| Error::Config(format!("no oracle control mean for {}", spec.scenario)))?
    } else {
        fit_mu0(data, data.config().lag)?
    };
    let estimate = att_bias_corrected(data, &design, &model)?;
    config
        .methods
        .iter()
        .map(|m| match m {
            Method::Bootstrap => block_bootstrap(
                &estimate,
                &BootstrapSpec::new(config.bootstrap_replicates, config.alpha, derive_seed(spec.seed, 1)),
            ),
            Method::Wls => wls_att(data, &design, WlsVariance::Naive, config.alpha),
            Method::WlsCluster => wls_att(data, &design, WlsVariance::Cluster, config.alpha),
            Method::WlsCorrected => wls_att(data, &design, WlsVariance::Corrected, config.alpha),
        })
        .collect()
}

/// Repeats generate, match, estimate and interval construction `reps` times
/// and summarizes how often each interval covers the true effect.
pub fn run_coverage_experiment(spec: &ScenarioSpec, config: &CoverageConfig) -> Result<ExperimentReport> {
    if spec.scenario == Scenario::AppendixC {
        return Err(Error::Config("appendix_c has no treated units; use the falsification experiment".into()));
    }
    if config.reps == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    if config.reps < 100 {
        warn!("{} replicates give imprecise coverage estimates", config.reps);
    }
    let outcomes: Vec<Result<Vec<InferenceResult>>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let rep_spec = ScenarioSpec {
                seed: derive_seed(spec.seed, r as u64),
                ..spec.clone()
            };
            one_coverage_replicate(&rep_spec, config)
        })
        .collect();
    let mut failed = 0;
    let mut ok = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                failed += 1;
            }
        }
    }
    let n = ok.len();
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            if n == 0 {
                return MethodSummary {
                    method,
                    coverage: f64::NAN,
                    coverage_se: f64::NAN,
                    mean_ci_length: f64::NAN,
                    ci_length_se: f64::NAN,
                    mean_estimate: f64::NAN,
                };
            }
            let covered = ok.iter().filter(|v| v[j].covers(spec.effect)).count();
            let lengths: Vec<f64> = ok.iter().map(|v| v[j].ci_length()).collect();
            let mean_len = lengths.iter().sum::<f64>() / n as f64;
            let var_len = if n > 1 {
                lengths.iter().map(|l| (l - mean_len).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let coverage = covered as f64 / n as f64;
            MethodSummary {
                method,
                coverage,
                coverage_se: rate_se(coverage, n),
                mean_ci_length: mean_len,
                ci_length_se: (var_len / n as f64).sqrt(),
                mean_estimate: ok.iter().map(|v| v[j].estimate).sum::<f64>() / n as f64,
            }
        })
        .collect();
    Ok(ExperimentReport {
        scenario: spec.scenario,
        replicates: config.reps,
        failed,
        alpha: config.alpha,
        methods,
        rejection: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationConfig {
    pub gammas: Vec<f64>,
    pub reps: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub n_control: usize,
    pub seed: u64,
}

impl FalsificationConfig {
    pub fn new(gammas: Vec<f64>, reps: usize, permutations: usize, seed: u64) -> Self {
        Self {
            gammas,
            reps,
            permutations,
            alpha: 0.05,
            n_control: 1000,
            seed,
        }
    }
}

/// For each time trend, the share of simulated datasets on which the
/// timepoint test rejects at level `alpha`.
pub fn run_falsification_experiment(config: &FalsificationConfig) -> Result<ExperimentReport> {
    if config.reps == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    if config.reps < 100 {
        warn!("{} replicates give imprecise rejection rates", config.reps);
    }
    let mut failed = 0;
    let mut rejection = Vec::with_capacity(config.gammas.len());
    for (g, &gamma) in config.gammas.iter().enumerate() {
        let base = derive_seed(config.seed, g as u64);
        let p_values: Vec<Result<f64>> = (0..config.reps)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(base, r as u64);
                let mut spec = ScenarioSpec::new(Scenario::AppendixC, seed).with_gamma(gamma);
                spec.n_control = config.n_control;
                let study = generate_scenario(&spec)?;
                let test = FalsifySpec::new(1, 2, config.permutations, derive_seed(seed, 1));
                Ok(timepoint_test(&study.dataset, &test)?.p_value)
            })
            .collect();
        let mut n = 0;
        let mut rejected = 0;
        for p in p_values {
            match p {
                Ok(p) => {
                    n += 1;
                    if p < config.alpha {
                        rejected += 1;
                    }
                }
                Err(e) => {
                    warn!("falsification replicate failed: {e}");
                    failed += 1;
                }
            }
        }
        let rate = if n > 0 { rejected as f64 / n as f64 } else { f64::NAN };
        rejection.push(RejectionRate {
            gamma,
            rate,
            se: rate_se(rate, n),
            replicates: n,
        });
    }
    Ok(ExperimentReport {
        scenario: Scenario::AppendixC,
        replicates: config.reps,
        failed,
        alpha: config.alpha,
        methods: Vec::new(),
        rejection,
    })
}

/// Plain-text rendering with one row per method or time trend.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario: {}  replicates: {}  failed: {}",
        report.scenario, report.replicates, report.failed
    );
    if !report.methods.is_empty() {
        let _ = writeln!(out, "{:<26} {:>16} {:>20}", "method", "coverage (se)", "mean CI length (se)");
        for m in &report.methods {
            let _ = writeln!(
                out,
                "{:<26} {:>7.1}% ({:>5.2}) {:>11.4} ({:.4})",
                m.method.label(),
                100.0 * m.coverage,
                100.0 * m.coverage_se,
                m.mean_ci_length,
                m.ci_length_se
            );
        }
    }
    if !report.rejection.is_empty() {
        let _ = writeln!(out, "{:<12} {:>16}", "gamma", "P < alpha (se)");
        for r in &report.rejection {
            let _ = writeln!(out, "{:<12} {:>8.3} ({:.3})", r.gamma, r.rate, r.se);
        }
    }
    out
}

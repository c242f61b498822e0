//! Confidence intervals for the ATT.
//!
//! The block bootstrap resamples whole-trajectory contributions without
//! re-matching. Weighted least squares with the matching weights is provided
//! as a baseline, with three variance estimators: the textbook `σ²(X'WX)⁻¹`,
//! the sandwich that is unbiased when `Var(Y) = σ²I`, and a cluster-robust
//! sandwich with trajectories as clusters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::estimate::EstimateResult;
use crate::panel::PanelDataset;
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    /// Replicate count `B`.
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub keep_replicates: bool,
}

impl BootstrapSpec {
    pub fn new(replicates: usize, alpha: f64, seed: u64) -> Self {
        Self {
            replicates,
            alpha,
            seed,
            keep_replicates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::Config(format!(
                "at least 100 bootstrap replicates are required, got {}",
                self.replicates
            )));
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    BlockBootstrap,
    Wls,
    WlsCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WlsVariance {
    Naive,
    Corrected,
    Cluster,
}

impl std::str::FromStr for WlsVariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(WlsVariance::Naive),
            "corrected" => Ok(WlsVariance::Corrected),
            "cluster" => Ok(WlsVariance::Cluster),
            other => Err(Error::Config(format!("unknown variance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub method: InferenceMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<WlsVariance>,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub std_error: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<Vec<f64>>,
}

impl InferenceResult {
    pub fn ci_length(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

/// Draws one bootstrap replicate of the ATT from trajectory contributions.
///
/// Other schemes (wild or Bayesian weights) plug in here.
pub trait Resampler: Sync {
    fn replicate(&self, contributions: &[f64], n_treated: usize, rng: &mut ChaCha8Rng) -> f64;
}

/// Resample `N` contributions with replacement; divide by the original `N1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nonparametric;

impl Resampler for Nonparametric {
    fn replicate(&self, contributions: &[f64], n_treated: usize, rng: &mut ChaCha8Rng) -> f64 {
        let n = contributions.len();
        let mut sum = 0.0;
        for _ in 0..n {
            sum += contributions[rng.random_range(0..n)];
        }
        sum / n_treated as f64
    }
}

/// Linear-interpolation sample quantile of sorted data (R's default type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn block_bootstrap(result: &EstimateResult, spec: &BootstrapSpec) -> Result<InferenceResult> {
    block_bootstrap_with(result, spec, &Nonparametric)
}

/// Percentile bootstrap interval. Replicate `b` draws from its own random
/// stream, so the output does not depend on the worker count.
pub fn block_bootstrap_with(
    result: &EstimateResult,
    spec: &BootstrapSpec,
    resampler: &dyn Resampler,
) -> Result<InferenceResult> {
    spec.validate()?;
    let values = result.values();
    if values.len() < 2 {
        return Err(Error::Degenerate(format!(
            "bootstrap needs at least 2 trajectories, got {}",
            values.len()
        )));
    }
    let n1 = result.n_treated;
    let reps: Vec<f64> = (0..spec.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(spec.seed, b as u64);
            resampler.replicate(&values, n1, &mut rng)
        })
        .collect();
    let mut sorted = reps.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    Ok(InferenceResult {
        method: InferenceMethod::BlockBootstrap,
        variance: None,
        estimate: result.estimate,
        ci_lo: quantile_sorted(&sorted, spec.alpha / 2.0),
        ci_hi: quantile_sorted(&sorted, 1.0 - spec.alpha / 2.0),
        std_error: var.sqrt(),
        alpha: spec.alpha,
        replicates: spec.keep_replicates.then_some(reps),
    })
}

/// Weighted least-squares fit with a chosen variance estimator.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Error-variance estimate for the naive and corrected estimators.
    pub sigma2: Option<f64>,
    /// Degrees of freedom for the interval quantile.
    pub df: f64,
}

impl WlsFit {
    pub fn std_error(&self, j: usize) -> f64 {
        self.covariance[(j, j)].sqrt()
    }
}

fn invert_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let max_diag = (0..p).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let chol = a.clone().cholesky().ok_or(Error::RankDeficient)?;
    let l = chol.l();
    if (0..p).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * max_diag) {
        return Err(Error::RankDeficient);
    }
    Ok(chol.inverse())
}

/// Fits `y ~ x` with diagonal weights `w`. `clusters[i]` labels the cluster of
/// row `i` and is only read by the cluster estimator.
pub fn fit_wls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &[f64],
    clusters: &[usize],
    variance: WlsVariance,
) -> Result<WlsFit> {
    let (n, p) = x.shape();
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    if n <= p {
        return Err(Error::RankDeficient);
    }
    let wv = DVector::from_column_slice(w);
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
    let a = xw.transpose() * x;
    let a_inv = invert_spd(&a)?;
    let beta = &a_inv * (xw.transpose() * y);
    let e = y - x * &beta;
    let (covariance, sigma2, df) = match variance {
        WlsVariance::Naive => {
            let s2 = e.iter().zip(w).map(|(ei, wi)| wi * ei * ei).sum::<f64>() / (n - p) as f64;
            (&a_inv * s2, Some(s2), (n - p) as f64)
        }
        WlsVariance::Corrected => {
            let xww = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i] * w[i]);
            let b = xww.transpose() * x;
            let xtx = x.transpose() * x;
            let bread = &a_inv * &b * &a_inv;
            // E[e'e] = σ² tr(I - 2H + H'H) with H = X (X'WX)⁻¹ X'W; tr(H) = p.
            let denom = n as f64 - 2.0 * p as f64 + (&bread * &xtx).trace();
            let s2 = e.norm_squared() / denom;
            (bread * s2, Some(s2), (n - p) as f64)
        }
        WlsVariance::Cluster => {
            let g_count = clusters.iter().copied().max().map_or(0, |m| m + 1);
            let mut scores = DMatrix::zeros(g_count, p);
            for i in 0..n {
                let s = wv[i] * e[i];
                for j in 0..p {
                    scores[(clusters[i], j)] += s * x[(i, j)];
                }
            }
            let mut distinct: Vec<usize> = clusters.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            let g = distinct.len();
            if g < 2 {
                return Err(Error::Degenerate("cluster variance needs at least 2 clusters".into()));
            }
            let meat = scores.transpose() * &scores;
            let factor = g as f64 / (g - 1) as f64 * (n - 1) as f64 / (n - p) as f64;
            (&a_inv * meat * &a_inv * factor, None, (g - 1) as f64)
        }
    };
    Ok(WlsFit {
        coefficients: beta,
        covariance,
        sigma2,
        df,
    })
}

/// Regression rows for the matched sample: treated instances with weight 1,
/// used control instances with weight `K_M / C`; columns are an intercept, the
/// treatment indicator, then the lagged history.
pub struct WlsDesign {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub weights: Vec<f64>,
    pub clusters: Vec<usize>,
}

pub fn wls_design(dataset: &PanelDataset, design: &MatchedDesign) -> Result<WlsDesign> {
    let c = design.controls_per_treated as f64;
    let mut rows: Vec<(Vec<f64>, f64, f64, usize)> = Vec::new();
    for set in &design.matched_sets {
        let r = dataset.resolve(&set.treated)?;
        let h = dataset.history(r.trajectory, r.time)?;
        rows.push((h, dataset.outcome(r).expect("resolved"), 1.0, r.trajectory));
    }
    let treated_rows = rows.len();
    for (key, k) in design.weights.iter() {
        let r = dataset.resolve(key)?;
        let h = dataset.history(r.trajectory, r.time)?;
        rows.push((h, dataset.outcome(r).expect("resolved"), k as f64 / c, r.trajectory));
    }
    let dim = dataset.history_len();
    let n = rows.len();
    let x = DMatrix::from_fn(n, dim + 2, |i, j| match j {
        0 => 1.0,
        1 => f64::from(u8::from(i < treated_rows)),
        _ => rows[i].0[j - 2],
    });
    Ok(WlsDesign {
        x,
        y: DVector::from_iterator(n, rows.iter().map(|r| r.1)),
        weights: rows.iter().map(|r| r.2).collect(),
        clusters: rows.iter().map(|r| r.3).collect(),
    })
}

/// Treatment coefficient of the matching-weighted regression with a
/// `1 - alpha` t interval.
pub fn wls_att(
    dataset: &PanelDataset,
    design: &MatchedDesign,
    variance: WlsVariance,
    alpha: f64,
) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let d = wls_design(dataset, design)?;
    let fit = fit_wls(&d.x, &d.y, &d.weights, &d.clusters, variance)?;
    Ok(interval_from_fit(&fit, 1, variance, alpha))
}

pub fn interval_from_fit(fit: &WlsFit, coef: usize, variance: WlsVariance, alpha: f64) -> InferenceResult {
    let se = fit.std_error(coef);
    let q = StudentsT::new(0.0, 1.0, fit.df)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha / 2.0);
    let est = fit.coefficients[coef];
    InferenceResult {
        method: if variance == WlsVariance::Cluster {
            InferenceMethod::WlsCluster
        } else {
            InferenceMethod::Wls
        },
        variance: Some(variance),
        estimate: est,
        ci_lo: est - q * se,
        ci_hi: est + q * se,
        std_error: se,
        alpha,
        replicates: None,
    }
}

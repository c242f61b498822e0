//! Outcome regression and ATT estimators expressed as per-trajectory contributions.
//!
//! Every estimator returns the point estimate together with one contribution
//! per trajectory such that the estimate equals the contribution total divided
//! by the number of matched treated units. The block bootstrap resamples these
//! contributions.

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::panel::{InstanceRef, PanelDataset};

/// Fitted conditional mean of the control outcome given a lagged history.
pub trait ConditionalMean: Send + Sync {
    fn predict(&self, history: &[f64]) -> f64;
    fn lag(&self) -> usize;
}

/// Linear outcome model `intercept + coefficients · history`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub lag: usize,
    pub intercept: f64,
    /// One coefficient per history coordinate; dropped columns hold 0.
    pub coefficients: Vec<f64>,
    /// History coordinates removed as linearly dependent on earlier ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<usize>,
    pub n_used: usize,
    pub residual_variance: f64,
}

impl OutcomeModel {
    /// `mu0 = 0` everywhere.
    pub fn zero(dim: usize, lag: usize) -> Self {
        Self::from_coefficients(lag, 0.0, vec![0.0; dim])
    }

    pub fn from_coefficients(lag: usize, intercept: f64, coefficients: Vec<f64>) -> Self {
        Self {
            lag,
            intercept,
            coefficients,
            dropped: Vec::new(),
            n_used: 0,
            residual_variance: f64::NAN,
        }
    }

    /// Least squares with intercept. Columns that are (numerically) linear
    /// combinations of earlier columns are dropped in column order.
    pub fn fit(histories: &[Vec<f64>], outcomes: &[f64], lag: usize) -> Result<Self> {
        let n = histories.len();
        assert_eq!(n, outcomes.len());
        let dim = histories.first().map_or(0, |h| h.len());
        if n < dim + 2 {
            return Err(Error::TooFewControls {
                needed: dim + 2,
                found: n,
            });
        }
        let means: Vec<f64> = (0..dim)
            .map(|j| histories.iter().map(|h| h[j]).sum::<f64>() / n as f64)
            .collect();
        let y_mean = outcomes.iter().sum::<f64>() / n as f64;
        let centered = DMatrix::from_fn(n, dim, |i, j| histories[i][j] - means[j]);

        // Modified Gram-Schmidt on centered columns to find dependent ones.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..dim {
            let col = centered.column(j).into_owned();
            let norm0 = col.norm();
            let mut v = col;
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
            let norm = v.norm();
            if norm0 > 0.0 && norm > 1e-9 * norm0 {
                basis.push(v / norm);
                kept.push(j);
            } else {
                dropped.push(j);
            }
        }
        if kept.is_empty() {
            return Err(Error::ConstantDesign);
        }
        if !dropped.is_empty() {
            warn!("outcome regression dropped linearly dependent columns {dropped:?}");
        }
        let x = DMatrix::from_fn(n, kept.len(), |i, j| centered[(i, kept[j])]);
        let y = DVector::from_iterator(n, outcomes.iter().map(|v| v - y_mean));
        let beta = x
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|_| Error::RankDeficient)?;
        let mut coefficients = vec![0.0; dim];
        for (b, &j) in beta.iter().zip(&kept) {
            coefficients[j] = *b;
        }
        let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
        let resid = &y - &x * &beta;
        let df = n - kept.len() - 1;
        Ok(Self {
            lag,
            intercept,
            coefficients,
            dropped,
            n_used: n,
            residual_variance: resid.norm_squared() / df as f64,
        })
    }
}

impl ConditionalMean for OutcomeModel {
    fn predict(&self, history: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(history)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    fn lag(&self) -> usize {
        self.lag
    }
}

/// Fits `mu0` on every eligible control instance using `lag` lagged timepoints.
pub fn fit_mu0(dataset: &PanelDataset, lag: usize) -> Result<OutcomeModel> {
    let mut histories = Vec::new();
    let mut outcomes = Vec::new();
    for r in dataset.eligible_controls() {
        let Ok(h) = dataset.history_with_lag(r.trajectory, r.time, lag) else {
            continue;
        };
        histories.push(h);
        outcomes.push(dataset.outcome(r).expect("eligible instance exists"));
    }
    if histories.is_empty() {
        return Err(Error::TooFewControls {
            needed: dataset.n_covariates() * lag + 2,
            found: 0,
        });
    }
    OutcomeModel::fit(&histories, &outcomes, lag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DiffMeans,
    BiasCorrected,
    Did,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub id: String,
    pub treated: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub kind: EstimatorKind,
    pub estimate: f64,
    pub n_treated: usize,
    /// One entry per trajectory entering the bootstrap: every control
    /// trajectory (zero when unused) and every matched treated trajectory.
    pub contributions: Vec<Contribution>,
}

impl EstimateResult {
    pub fn values(&self) -> Vec<f64> {
        self.contributions.iter().map(|c| c.value).collect()
    }

    /// `(1/N1) * sum of contributions`.
    pub fn contribution_mean(&self) -> f64 {
        self.contributions.iter().map(|c| c.value).sum::<f64>() / self.n_treated as f64
    }
}

struct Residuals<'a> {
    dataset: &'a PanelDataset,
    model: Option<&'a dyn ConditionalMean>,
    did: bool,
}

impl Residuals<'_> {
    fn at(&self, r: InstanceRef) -> Result<f64> {
        let traj = &self.dataset.trajectories()[r.trajectory];
        let y = traj
            .instance_at(r.time)
            .ok_or_else(|| Error::InsufficientHistory {
                id: traj.id.clone(),
                time: r.time,
                lag: self.dataset.config().lag,
            })?
            .outcome;
        match self.model {
            None => Ok(y),
            Some(m) => {
                let h = self.dataset.history_with_lag(r.trajectory, r.time, m.lag())?;
                Ok(y - m.predict(&h))
            }
        }
    }

    /// Residualized outcome (or its one-step change for DiD).
    fn value(&self, r: InstanceRef) -> Result<f64> {
        let now = self.at(r)?;
        if !self.did {
            return Ok(now);
        }
        let prev = InstanceRef {
            trajectory: r.trajectory,
            time: r.time - 1,
        };
        let traj = &self.dataset.trajectories()[r.trajectory];
        if traj.instance_at(prev.time).is_none() {
            return Err(Error::InsufficientHistory {
                id: traj.id.clone(),
                time: prev.time,
                lag: self.dataset.config().lag,
            });
        }
        Ok(now - self.at(prev)?)
    }
}

fn estimate(
    dataset: &PanelDataset,
    design: &MatchedDesign,
    kind: EstimatorKind,
    model: Option<&dyn ConditionalMean>,
) -> Result<EstimateResult> {
    if let Some(m) = model {
        if m.lag() != dataset.config().lag {
            return Err(Error::Config(format!(
                "outcome model lag {} differs from study lag {}",
                m.lag(),
                dataset.config().lag
            )));
        }
    }
    let n1 = design.n_treated();
    if n1 == 0 {
        return Err(Error::Degenerate("design has no matched sets".into()));
    }
    let c = design.controls_per_treated as f64;
    let res = Residuals {
        dataset,
        model,
        did: kind == EstimatorKind::Did,
    };

    let mut set_total = 0.0;
    let mut treated_value: HashMap<usize, f64> = HashMap::with_capacity(n1);
    for set in &design.matched_sets {
        let t = dataset.resolve(&set.treated)?;
        let rt = res.value(t)?;
        let mut ctrl = 0.0;
        for m in &set.controls {
            ctrl += res.value(dataset.resolve(&m.instance)?)?;
        }
        set_total += rt - ctrl / c;
        treated_value.insert(t.trajectory, rt);
    }

    let mut control_value: HashMap<usize, f64> = HashMap::new();
    for (key, k) in design.weights.iter() {
        let r = dataset.resolve(key)?;
        *control_value.entry(r.trajectory).or_insert(0.0) -= k as f64 / c * res.value(r)?;
    }

    let contributions = dataset
        .trajectories()
        .iter()
        .enumerate()
        .filter_map(|(pos, traj)| {
            let value = if traj.is_treated() {
                *treated_value.get(&pos)?
            } else {
                control_value.get(&pos).copied().unwrap_or(0.0)
            };
            Some(Contribution {
                id: traj.id.clone(),
                treated: traj.is_treated(),
                value,
            })
        })
        .collect();

    Ok(EstimateResult {
        kind,
        estimate: set_total / n1 as f64,
        n_treated: n1,
        contributions,
    })
}

/// Difference in means between treated outcomes and matched-control averages.
pub fn att_diff_means(dataset: &PanelDataset, design: &MatchedDesign) -> Result<EstimateResult> {
    estimate(dataset, design, EstimatorKind::DiffMeans, None)
}

/// Bias-corrected ATT: each outcome is residualized by `model` at its own history.
pub fn att_bias_corrected(
    dataset: &PanelDataset,
    design: &MatchedDesign,
    model: &dyn ConditionalMean,
) -> Result<EstimateResult> {
    estimate(dataset, design, EstimatorKind::BiasCorrected, Some(model))
}

/// Difference-in-differences: residualized one-step outcome changes from
/// `t - 1` to `t`, compared within matched sets.
pub fn att_did(
    dataset: &PanelDataset,
    design: &MatchedDesign,
    model: &dyn ConditionalMean,
) -> Result<EstimateResult> {
    estimate(dataset, design, EstimatorKind::Did, Some(model))
}

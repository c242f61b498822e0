//! Distances between lagged covariate histories.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Mahalanobis,
    Euclidean,
    ScaledEuclidean,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis" => Ok(Metric::Mahalanobis),
            "euclidean" => Ok(Metric::Euclidean),
            "scaled-euclidean" => Ok(Metric::ScaledEuclidean),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Which histories estimate the scaling matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariancePool {
    #[default]
    EligibleControls,
    TreatedAndControls,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    #[serde(default)]
    pub metric: Metric,
    /// Maximum admissible distance; candidates beyond it are infeasible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caliper: Option<f64>,
    #[serde(default)]
    pub covariance_pool: CovariancePool,
    /// Add a small ridge to a singular covariance instead of failing.
    #[serde(default = "default_true")]
    pub ridge_fallback: bool,
}

impl Default for DistanceSpec {
    fn default() -> Self {
        Self {
            metric: Metric::Mahalanobis,
            caliper: None,
            covariance_pool: CovariancePool::EligibleControls,
            ridge_fallback: true,
        }
    }
}

impl DistanceSpec {
    pub fn euclidean() -> Self {
        Self {
            metric: Metric::Euclidean,
            ..Self::default()
        }
    }

    pub fn with_caliper(mut self, caliper: f64) -> Self {
        self.caliper = Some(caliper);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.caliper {
            Some(c) if !(c > 0.0 && c.is_finite()) => {
                Err(Error::Config(format!("caliper must be positive, got {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn admits(&self, distance: f64) -> bool {
        self.caliper.is_none_or(|c| distance <= c)
    }
}

/// Positive semi-definite matrix `S` of the quadratic form `(a-b)' S (a-b)`,
/// stored together with a factor `F` such that `S = F' F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    ridge: Option<f64>,
}

impl Scaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            factor: DMatrix::identity(dim, dim),
            ridge: None,
        }
    }

    /// Wraps an explicit symmetric positive-definite matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularScaling("matrix is not positive definite".into()))?;
        let factor = chol.l().transpose();
        Ok(Self {
            matrix,
            factor,
            ridge: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Ridge added to the diagonal during fitting, if any.
    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    /// Maps a history into coordinates where the distance is Euclidean.
    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(v);
        (&self.factor * x).iter().copied().collect()
    }
}

/// Euclidean distance between two already-transformed histories.
pub fn transformed_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sample_covariance(histories: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    let n = histories.len() as f64;
    let mut mean = vec![0.0; dim];
    for h in histories {
        for (m, v) in mean.iter_mut().zip(h) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(dim, dim);
    for h in histories {
        for i in 0..dim {
            let di = h[i] - mean[i];
            for j in i..dim {
                cov[(i, j)] += di * (h[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

fn ridge_for(cov: &DMatrix<f64>) -> f64 {
    1e-8 * cov.trace() / cov.nrows() as f64
}

/// Fits the scaling matrix for `spec.metric` from a pool of histories.
pub fn fit_scaling(histories: &[Vec<f64>], spec: &DistanceSpec) -> Result<Scaling> {
    if histories.len() < 2 {
        return Err(Error::Degenerate(format!(
            "scaling needs at least 2 histories, got {}",
            histories.len()
        )));
    }
    let dim = histories[0].len();
    if let Some(h) = histories.iter().find(|h| h.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            found: h.len(),
        });
    }
    match spec.metric {
        Metric::Euclidean => Ok(Scaling::identity(dim)),
        Metric::ScaledEuclidean => {
            let cov = sample_covariance(histories, dim);
            let mut ridge = None;
            let mut diag: Vec<f64> = (0..dim).map(|i| cov[(i, i)]).collect();
            if diag.iter().any(|&v| v <= 0.0) {
                let eps = ridge_for(&cov);
                if !spec.ridge_fallback || eps <= 0.0 {
                    return Err(Error::SingularScaling("zero-variance coordinate".into()));
                }
                warn!("zero-variance coordinate in scaled-euclidean scaling; adding ridge {eps:e}");
                diag.iter_mut().for_each(|v| *v += eps);
                ridge = Some(eps);
            }
            let matrix = DMatrix::from_diagonal(&DVector::from_iterator(
                dim,
                diag.iter().map(|v| 1.0 / v),
            ));
            let factor =
                DMatrix::from_diagonal(&DVector::from_iterator(dim, diag.iter().map(|v| v.sqrt().recip())));
            Ok(Scaling {
                matrix,
                factor,
                ridge,
            })
        }
        Metric::Mahalanobis => {
            let cov = sample_covariance(histories, dim);
            let max_diag = (0..dim).map(|i| cov[(i, i)]).fold(0.0, f64::max);
            let well_conditioned = |m: &DMatrix<f64>| {
                m.clone().cholesky().filter(|c| {
                    let l = c.l();
                    (0..dim).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * max_diag)
                })
            };
            let (chol, ridge) = match well_conditioned(&cov) {
                Some(c) => (c, None),
                None => {
                    let eps = ridge_for(&cov);
                    if !spec.ridge_fallback || eps <= 0.0 {
                        return Err(Error::SingularScaling("covariance is not invertible".into()));
                    }
                    warn!("singular covariance in mahalanobis scaling; adding ridge {eps:e}");
                    let mut ridged = cov.clone();
                    for i in 0..dim {
                        ridged[(i, i)] += eps;
                    }
                    let c = ridged
                        .cholesky()
                        .ok_or_else(|| Error::SingularScaling("covariance is not invertible".into()))?;
                    (c, Some(eps))
                }
            };
            // cov = M M'  =>  cov^-1 = M^-T M^-1, so F = M^-1.
            let m_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(dim, dim))
                .ok_or_else(|| Error::SingularScaling("triangular solve failed".into()))?;
            let matrix = m_inv.transpose() * &m_inv;
            Ok(Scaling {
                matrix,
                factor: m_inv,
                ridge,
            })
        }
    }
}

/// `sqrt((a-b)' S (a-b))`.
pub fn distance(a: &[f64], b: &[f64], scaling: &Scaling) -> Result<f64> {
    let dim = scaling.dim();
    for v in [a, b] {
        if v.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: v.len(),
            });
        }
    }
    let d = DVector::from_iterator(dim, a.iter().zip(b).map(|(x, y)| x - y));
    let q = (d.transpose() * scaling.matrix() * &d)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

//! Spectral errors, objective gaps, conditioning and annualized statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_vector, seeded_rng, sym_eigenvalues_desc, sym_spectral_norm};
use crate::model::{FactorModel, ModelKind};

/// 48 five-minute intervals per day, 244 trading days.
pub const INTERVALS_PER_YEAR: usize = 11_712;

/// Largest dimension for which spectral norms use a dense eigensolve.
pub const DENSE_NORM_LIMIT: usize = 1000;

const POWER_ITERS: usize = 50;

fn symmetric_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() <= DENSE_NORM_LIMIT {
        return sym_spectral_norm(m);
    }
    // power iteration on M² converges to the largest |λ|
    let mut u = gaussian_vector(&mut seeded_rng(0x5eed), m.nrows());
    u.normalize_mut();
    let mut est = 0.0;
    for _ in 0..POWER_ITERS {
        let v = m * &u;
        est = v.norm();
        if est == 0.0 {
            return 0.0;
        }
        u = v / est;
    }
    est
}

/// `‖Σ̂ − Σ‖₂ / ‖Σ‖₂` for symmetric matrices.
pub fn relative_spectral_error(sigma_hat: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma_hat.shape() != sigma.shape() || sigma.nrows() != sigma.ncols() {
        return Err(Error::dim("covariances must be square and of equal shape"));
    }
    let denom = symmetric_norm(sigma);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "reference covariance is zero".into(),
        ));
    }
    Ok(symmetric_norm(&(sigma_hat - sigma)) / denom)
}

/// `max(f − f_ref, 0) / max(|f_ref|, 1e-12)`.
pub fn objective_gap(f_hat: f64, f_ref: f64) -> f64 {
    (f_hat - f_ref).max(0.0) / f_ref.abs().max(1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Gap of the solver against the exact optimum of the same model, when
    /// an exact optimum is available.
    pub model_gap: Option<f64>,
    /// Approximate-model optimizer evaluated in the full objective against
    /// the full-model optimum.
    pub full_model_gap: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compounding {
    /// `mean · N`.
    #[default]
    Simple,
    /// `(1 + mean)^N − 1`.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioStats {
    /// Percent per year.
    pub annualized_return: f64,
    /// Percent per year.
    pub annualized_vol: f64,
    pub intervals_per_year: usize,
}

pub fn annualize(returns: &[f64]) -> Result<PortfolioStats> {
    annualize_with(returns, Compounding::Simple)
}

pub fn annualize_with(returns: &[f64], compounding: Compounding) -> Result<PortfolioStats> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!(
            "volatility needs at least 2 intervals, got {n}"
        )));
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let periods = INTERVALS_PER_YEAR as f64;
    let ann = match compounding {
        Compounding::Simple => mean * periods,
        Compounding::Geometric => (1.0 + mean).powf(periods) - 1.0,
    };
    Ok(PortfolioStats {
        annualized_return: ann * 100.0,
        annualized_vol: var.sqrt() * periods.sqrt() * 100.0,
        intervals_per_year: INTERVALS_PER_YEAR,
    })
}

/// `wᵀ r_t` for every period `t` of an asset × period matrix.
pub fn portfolio_returns(weights: &DVector<f64>, returns: &DMatrix<f64>) -> Result<Vec<f64>> {
    if weights.len() != returns.nrows() {
        return Err(Error::dim("weights and return panel differ in asset count"));
    }
    Ok(returns.tr_mul(weights).iter().copied().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `None` when the covariance is singular.
    pub kappa: Option<f64>,
    pub infinite: bool,
}

impl ConditioningReport {
    fn from_extremes(lambda_min: f64, lambda_max: f64) -> Self {
        if lambda_min > 0.0 {
            Self {
                lambda_min,
                lambda_max,
                kappa: Some(lambda_max / lambda_min),
                infinite: false,
            }
        } else {
            Self {
                lambda_min: lambda_min.max(0.0),
                lambda_max,
                kappa: None,
                infinite: true,
            }
        }
    }
}

/// Eigenvalue extremes of `L_eff L_effᵀ + γI`.
///
/// STR models use the stored singular values; other models fall back to a
/// dense eigensolve unless the factor is visibly rank deficient with no
/// ridge.
pub fn conditioning_report(model: &FactorModel) -> ConditioningReport {
    let n = model.n_assets();
    let gamma = model.gamma;
    let sv = &model.provenance.retained_singular_values;
    if model.kind == ModelKind::Str && !sv.is_empty() {
        let lambda_max = sv[0] * sv[0] + gamma;
        let lambda_min = if sv.len() < n {
            gamma
        } else {
            sv[sv.len() - 1].powi(2) + gamma
        };
        return ConditioningReport::from_extremes(lambda_min, lambda_max);
    }
    if gamma == 0.0 && model.n_columns() < n {
        let lambda_max = crate::linalg::spectral_norm(&model.factor).powi(2);
        return ConditioningReport::from_extremes(0.0, lambda_max);
    }
    let eig = sym_eigenvalues_desc(&model.dense_covariance());
    ConditioningReport::from_extremes(eig[eig.len() - 1], eig[0])
}

/// Eigenvalue extremes of an explicit symmetric matrix.
pub fn dense_conditioning(sigma: &DMatrix<f64>) -> ConditioningReport {
    let eig = sym_eigenvalues_desc(sigma);
    ConditioningReport::from_extremes(eig[eig.len() - 1], eig[0])
}

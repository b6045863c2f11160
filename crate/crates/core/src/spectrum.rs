//! Thin SVD, cumulative energy and the truncation-level rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, svd_desc, sym_eigenvalues_desc};

pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// `A ≈ U diag(S) Vᵀ` restricted to singular values above the rank
/// tolerance, sorted in descending order.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = DVector::from_column_slice(&self.singular_values);
        &self.u * DMatrix::from_diagonal(&s) * self.v.transpose()
    }

    /// `U_ℓ diag(S_ℓ)`, the left factor with the right singular vectors
    /// dropped.
    pub fn scaled_left(&self, ell: usize) -> DMatrix<f64> {
        let ell = ell.min(self.rank());
        let mut out = self.u.columns(0, ell).into_owned();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.singular_values[j];
        }
        out
    }
}

pub fn thin_svd(a: &DMatrix<f64>, rank_tol: f64) -> Result<ThinSvd> {
    ensure_finite(a, "matrix")?;
    let (n, m) = a.shape();
    let empty = || ThinSvd {
        u: DMatrix::zeros(n, 0),
        singular_values: Vec::new(),
        v: DMatrix::zeros(m, 0),
    };
    if n == 0 || m == 0 {
        return Ok(empty());
    }
    let (u, sv, v) = svd_desc(a)?;
    let top = sv[0];
    if !(top > 0.0) {
        return Ok(empty());
    }
    let r = sv
        .iter()
        .take_while(|&&s| s > 0.0 && s >= rank_tol * top)
        .count();
    Ok(ThinSvd {
        u: u.columns(0, r).into_owned(),
        singular_values: sv[..r].to_vec(),
        v: v.columns(0, r).into_owned(),
    })
}

/// Cumulative explained-variance curve. The flag is `true` when the total
/// is zero, in which case the curve is all zeros.
pub fn cumulative_energy(eigenvalues: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return (vec![0.0; eigenvalues.len()], true);
    }
    let mut acc = 0.0;
    let mut energy: Vec<f64> = eigenvalues
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    if let Some(last) = energy.last_mut() {
        *last = 1.0;
    }
    (energy, false)
}

/// Smallest `r` (1-based) with `E(r) ≥ η`.
pub fn energy_rank(energy: &[f64], eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::arg(format!("eta must lie in (0, 1), got {eta}")));
    }
    energy
        .iter()
        .position(|&e| e >= eta)
        .map(|i| i + 1)
        .ok_or_else(|| Error::DegenerateSpectrum(format!("energy never reaches {eta}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRule {
    pub tau: f64,
    pub rho: f64,
}

impl Default for TruncationRule {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            rho: 0.9,
        }
    }
}

impl TruncationRule {
    pub fn new(tau: f64, rho: f64) -> Result<Self> {
        let rule = Self { tau, rho };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::arg(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::arg(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Truncation level from singular values; the rule is evaluated on the
/// squared values.
pub fn select_truncation_level(singular_values: &[f64], rule: &TruncationRule) -> Result<usize> {
    let eigs: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    select_truncation_level_from_eigenvalues(&eigs, rule)
}

/// `ℓ = max{ i : λ_i/λ_1 ≥ τ and λ_{i+1}/λ_i ≤ ρ }` with `λ_{r+1} = 0`.
///
/// Indices with `λ_i = 0` are never selected. If every head index fails the
/// knee test (possible only when the head ends before the spectrum does and
/// the spectrum is flat there), the last head index is returned.
pub fn select_truncation_level_from_eigenvalues(
    eigs: &[f64],
    rule: &TruncationRule,
) -> Result<usize> {
    rule.validate()?;
    let top = eigs.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateSpectrum(
            "leading singular value is zero".into(),
        ));
    }
    let mut head_end = 0;
    let mut best = None;
    for i in 0..eigs.len() {
        let li = eigs[i];
        if !(li > 0.0 && li / top >= rule.tau) {
            continue;
        }
        head_end = i + 1;
        let next = eigs.get(i + 1).copied().unwrap_or(0.0);
        if next / li <= rule.rho {
            best = Some(i + 1);
        }
    }
    Ok(best.unwrap_or(head_end))
}

/// `λ̃_{ℓ+1}/(1−ε)`, zero once the spectrum is exhausted.
pub fn truncation_error_bound(sketched_eigs: &[f64], ell: usize, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::arg(format!(
            "epsilon must lie in [0, 1), got {epsilon}"
        )));
    }
    Ok(sketched_eigs.get(ell).map_or(0.0, |&v| v / (1.0 - epsilon)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub singular_values: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub energy: Vec<f64>,
    pub numerical_rank: usize,
}

impl SpectrumReport {
    pub fn from_singular_values(mut singular_values: Vec<f64>, rank_tol: f64) -> Self {
        singular_values.sort_by(|a, b| b.total_cmp(a));
        let top = singular_values.first().copied().unwrap_or(0.0);
        let numerical_rank = if top > 0.0 {
            singular_values
                .iter()
                .filter(|&&s| s >= rank_tol * top)
                .count()
        } else {
            0
        };
        let eigenvalues: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
        let (energy, _) = cumulative_energy(&eigenvalues);
        Self {
            singular_values,
            eigenvalues,
            energy,
            numerical_rank,
        }
    }

    /// Full singular spectrum of `A` (all `min(n, m)` values).
    pub fn of_matrix(a: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        ensure_finite(a, "matrix")?;
        let sv: Vec<f64> = if a.is_empty() {
            Vec::new()
        } else {
            a.clone().singular_values().iter().copied().collect()
        };
        Ok(Self::from_singular_values(sv, rank_tol))
    }

    /// Spectrum of a factor with many columns via the `n×n` Gram matrix.
    pub fn of_factor_via_gram(l: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        ensure_finite(l, "factor")?;
        let eigs = sym_eigenvalues_desc(&(l * l.transpose()));
        let sv = eigs.iter().map(|v| v.max(0.0).sqrt()).collect();
        Ok(Self::from_singular_values(sv, rank_tol))
    }

    pub fn condition_number(&self) -> Option<f64> {
        let r = self.numerical_rank;
        (r > 0).then(|| self.eigenvalues[0] / self.eigenvalues[r - 1])
    }
}

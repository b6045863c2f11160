//! Euclidean projection onto `F = Δ ∩ H`, the unit simplex intersected with
//! the return halfspace `H = {x : μᵀx ≥ R}`.
//!
//! The main routine parameterizes candidates by the multiplier `ν` of the
//! return constraint, `x(ν) = Π_Δ(v + νμ)`, and searches for `φ(ν) = μᵀx(ν)
//! = R`. `φ` is continuous, nondecreasing and piecewise linear in `ν`, so once
//! the bracket isolates a single piece the root is obtained in closed form.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleSet {
    pub mu: DVector<f64>,
    pub r_target: f64,
}

impl FeasibleSet {
    /// Targets above `max μ` are accepted here and rejected by the
    /// projection and solver entry points; see [`Self::is_attainable`].
    pub fn new(mu: DVector<f64>, r_target: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::dim(format!(
                "need at least 2 assets, got {}",
                mu.len()
            )));
        }
        if !mu.iter().all(|v| v.is_finite()) || !r_target.is_finite() {
            return Err(Error::numeric("expected returns and target must be finite"));
        }
        Ok(Self { mu, r_target })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn max_return(&self) -> f64 {
        self.mu.max()
    }

    pub fn is_attainable(&self) -> bool {
        self.r_target <= self.max_return()
    }

    pub fn check_attainable(&self) -> Result<()> {
        if self.is_attainable() {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "target return {} exceeds the largest expected return {}",
                self.r_target,
                self.max_return()
            )))
        }
    }

    /// Membership test with absolute slack `tol` on every constraint.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().all(|&v| v >= -tol)
            && (x.sum() - 1.0).abs() <= tol
            && self.mu.dot(x) >= self.r_target - tol
    }

    fn return_tol(&self, rel: f64) -> f64 {
        rel * self.r_target.abs().max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub tol_scalar: f64,
    pub max_bracket_doublings: usize,
    pub dykstra_max_iters: usize,
    pub dykstra_tol: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            tol_scalar: 1e-10,
            max_bracket_doublings: 60,
            dykstra_max_iters: 10_000,
            dykstra_tol: 1e-10,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_scalar > 0.0)
            || self.max_bracket_doublings == 0
            || self.dykstra_max_iters == 0
            || !(self.dykstra_tol > 0.0)
        {
            return Err(Error::arg(
                "projection tolerances and budgets must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    /// Multiplier of the return constraint; zero on the inactive path.
    pub nu: f64,
    pub constraint_active: bool,
    pub doublings: usize,
    pub bisection_iterations: usize,
    pub used_fallback: bool,
    /// `|μᵀx − R|` on the active path, zero otherwise.
    pub return_residual: f64,
}

/// Threshold `τ` with `Π_Δ(v) = max(v − τ, 0)`.
pub fn simplex_threshold(v: &DVector<f64>) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::dim("cannot project an empty vector"));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::numeric("non-finite entry in projection input"));
    }
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = sorted[0] - 1.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    Ok(tau)
}

pub fn project_simplex(v: &DVector<f64>) -> Result<DVector<f64>> {
    let tau = simplex_threshold(v)?;
    Ok(v.map(|x| (x - tau).max(0.0)))
}

pub fn project_halfspace(y: &DVector<f64>, set: &FeasibleSet) -> Result<DVector<f64>> {
    if y.len() != set.dim() {
        return Err(Error::dim("vector and feasible set differ in dimension"));
    }
    let my = set.mu.dot(y);
    if my >= set.r_target {
        return Ok(y.clone());
    }
    let nn = set.mu.norm_squared();
    if nn == 0.0 {
        return Err(Error::Infeasible(
            "zero return vector with a positive target".into(),
        ));
    }
    let mut out = y.clone();
    out.axpy((set.r_target - my) / nn, &set.mu, 1.0);
    Ok(out)
}

struct DualPath<'a> {
    v: &'a DVector<f64>,
    mu: &'a DVector<f64>,
}

impl DualPath<'_> {
    fn point(&self, nu: f64) -> Result<DVector<f64>> {
        let mut w = self.v.clone();
        w.axpy(nu, self.mu, 1.0);
        project_simplex(&w)
    }

    fn phi(&self, nu: f64) -> Result<(f64, DVector<f64>)> {
        let x = self.point(nu)?;
        Ok((self.mu.dot(&x), x))
    }

    /// Root of the affine piece of `φ` whose support is that of `x`.
    fn linear_piece_root(&self, x: &DVector<f64>, r: f64) -> Option<f64> {
        let (mut a, mut b, mut c, mut d, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            if x[i] > 0.0 {
                let (vi, mi) = (self.v[i], self.mu[i]);
                a += mi * vi;
                b += mi * mi;
                c += vi;
                d += mi;
                k += 1.0;
            }
        }
        let slope = b - d * d / k;
        let offset = a - (c - 1.0) * d / k;
        (slope > 0.0).then(|| (r - offset) / slope)
    }
}

/// Projection onto `F`, falling back to Dykstra's method if the scalar
/// search cannot bracket or converge.
pub fn project_feasible(
    v: &DVector<f64>,
    set: &FeasibleSet,
    cfg: &ProjectionConfig,
) -> Result<(DVector<f64>, ProjectionDiagnostics)> {
    if v.len() != set.dim() {
        return Err(Error::dim("vector and feasible set differ in dimension"));
    }
    set.check_attainable()?;
    let r = set.r_target;
    let path = DualPath { v, mu: &set.mu };
    let (phi0, x0) = path.phi(0.0)?;
    if phi0 >= r {
        return Ok((x0, ProjectionDiagnostics::default()));
    }
    let tol = set.return_tol(cfg.tol_scalar);
    let mut diag = ProjectionDiagnostics {
        constraint_active: true,
        ..Default::default()
    };

    let (mut lo, mut phi_lo, mut x_lo) = (0.0, phi0, x0);
    let mut hi = 1.0;
    let (mut phi_hi, mut x_hi) = path.phi(hi)?;
    while phi_hi < r {
        if diag.doublings >= cfg.max_bracket_doublings {
            return fallback(v, set, cfg, diag);
        }
        (lo, phi_lo, x_lo) = (hi, phi_hi, x_hi);
        hi *= 2.0;
        (phi_hi, x_hi) = path.phi(hi)?;
        diag.doublings += 1;
    }

    let mut best = if phi_hi - r <= r - phi_lo {
        (hi, phi_hi, x_hi.clone())
    } else {
        (lo, phi_lo, x_lo.clone())
    };
    // Alternate a closed-form step on the current piece with bisection.
    let max_iters = 4 * (cfg.max_bracket_doublings + 64);
    while (best.1 - r).abs() > tol {
        if diag.bisection_iterations >= max_iters || hi - lo <= f64::EPSILON * hi {
            break;
        }
        diag.bisection_iterations += 1;
        let mut candidates = Vec::with_capacity(3);
        for x in [&x_lo, &x_hi] {
            if let Some(nu) = path.linear_piece_root(x, r) {
                if nu > lo && nu < hi {
                    candidates.push(nu);
                }
            }
        }
        candidates.push(0.5 * (lo + hi));
        for nu in candidates {
            if nu <= lo || nu >= hi {
                continue;
            }
            let (p, x) = path.phi(nu)?;
            if (p - r).abs() < (best.1 - r).abs() {
                best = (nu, p, x.clone());
            }
            if p < r {
                (lo, x_lo) = (nu, x);
            } else {
                (hi, x_hi) = (nu, x);
            }
        }
    }
    // One closed-form step on the final piece removes the remaining slack.
    if let Some(nu) = path.linear_piece_root(&best.2, r) {
        if nu.is_finite() && nu >= 0.0 {
            let (p, x) = path.phi(nu)?;
            if (p - r).abs() < (best.1 - r).abs() {
                best = (nu, p, x);
            }
        }
    }
    let (nu, p, x) = best;
    if (p - r).abs() > tol {
        return fallback(v, set, cfg, diag);
    }
    diag.nu = nu;
    diag.return_residual = (p - r).abs();
    Ok((x, diag))
}

fn fallback(
    v: &DVector<f64>,
    set: &FeasibleSet,
    cfg: &ProjectionConfig,
    mut diag: ProjectionDiagnostics,
) -> Result<(DVector<f64>, ProjectionDiagnostics)> {
    let x = dykstra_project(v, set, cfg)?;
    diag.used_fallback = true;
    diag.return_residual = (set.mu.dot(&x) - set.r_target).abs();
    Ok((x, diag))
}

/// Dykstra's alternating projections between `Δ` and `H`. Returns the
/// simplex iterate, which satisfies the return constraint to within the
/// convergence tolerance.
pub fn dykstra_project(
    v: &DVector<f64>,
    set: &FeasibleSet,
    cfg: &ProjectionConfig,
) -> Result<DVector<f64>> {
    if v.len() != set.dim() {
        return Err(Error::dim("vector and feasible set differ in dimension"));
    }
    set.check_attainable()?;
    let n = v.len();
    let mut x = v.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    for _ in 0..cfg.dykstra_max_iters {
        let y_new = project_simplex(&(&x + &p))?;
        p += &x - &y_new;
        let x_new = project_halfspace(&(&y_new + &q), set)?;
        q += &y_new - &x_new;
        let change = (&y_new - &y).norm().max((&x_new - &x).norm());
        let gap = (&y_new - &x_new).norm();
        y = y_new;
        x = x_new;
        if change <= cfg.dykstra_tol && gap <= cfg.dykstra_tol {
            return Ok(y);
        }
    }
    Err(Error::ProjectionFailure(format!(
        "Dykstra did not converge in {} iterations",
        cfg.dykstra_max_iters
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn set(mu: &[f64], r: f64) -> FeasibleSet {
        FeasibleSet::new(dv(mu), r).unwrap()
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&dv(&[0.5, 0.5])).unwrap(), dv(&[0.5, 0.5]));
        assert_eq!(simplex_threshold(&dv(&[1.5, 0.5])).unwrap(), 0.5);
        assert_eq!(project_simplex(&dv(&[1.5, 0.5])).unwrap(), dv(&[1.0, 0.0]));
        let tau = simplex_threshold(&dv(&[0.2, 0.1, 0.0])).unwrap();
        assert!((tau + 7.0 / 30.0).abs() < 1e-15);
        let x = project_simplex(&dv(&[0.2, 0.1, 0.0])).unwrap();
        let expect = dv(&[13.0 / 30.0, 10.0 / 30.0, 7.0 / 30.0]);
        assert!((x - expect).amax() < 1e-15);
    }

    #[test]
    fn simplex_rejects_non_finite() {
        assert!(matches!(
            project_simplex(&dv(&[1.0, f64::NAN])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn halfspace_examples() {
        let s = set(&[1.0, 0.0], 0.5);
        assert_eq!(
            project_halfspace(&dv(&[0.6, 0.4]), &s).unwrap(),
            dv(&[0.6, 0.4])
        );
        assert_eq!(
            project_halfspace(&dv(&[0.0, 0.0]), &s).unwrap(),
            dv(&[0.5, 0.0])
        );
        let s2 = set(&[1.0, 1.0], 2.0);
        assert_eq!(
            project_halfspace(&dv(&[0.0, 0.0]), &s2).unwrap(),
            dv(&[1.0, 1.0])
        );
        let s3 = set(&[0.0, 0.0], 1.0);
        assert!(matches!(
            project_halfspace(&dv(&[0.0, 0.0]), &s3),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn feasible_inactive_path() {
        let (x, d) = project_feasible(
            &dv(&[0.5, 0.5]),
            &set(&[1.0, 0.0], 0.3),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert_eq!(x, dv(&[0.5, 0.5]));
        assert!(!d.constraint_active);
        assert_eq!(d.nu, 0.0);
    }

    #[test]
    fn feasible_active_path() {
        let (x, d) = project_feasible(
            &dv(&[0.5, 0.5]),
            &set(&[1.0, 0.0], 0.9),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert!((x - dv(&[0.9, 0.1])).amax() < 1e-12);
        assert!(d.constraint_active);
        assert!((d.nu - 0.8).abs() < 1e-10);
        assert!(!d.used_fallback);
    }

    #[test]
    fn feasible_target_above_max_is_infeasible() {
        let r = project_feasible(
            &dv(&[0.5, 0.5]),
            &set(&[0.1, 0.2], 0.5),
            &ProjectionConfig::default(),
        );
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn target_at_max_return_concentrates_weight() {
        let (x, _) = project_feasible(
            &dv(&[0.3, 0.3, 0.4]),
            &set(&[0.1, 0.5, 0.2], 0.5),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert!((x - dv(&[0.0, 1.0, 0.0])).amax() < 1e-10);
    }

    #[test]
    fn dykstra_matches_scalar_search() {
        let cfg = ProjectionConfig::default();
        let s = set(&[1.0, 0.0], 0.9);
        let x = dykstra_project(&dv(&[0.5, 0.5]), &s, &cfg).unwrap();
        assert!((x - dv(&[0.9, 0.1])).amax() < 1e-8);
        let y = dykstra_project(&dv(&[0.5, 0.5]), &set(&[1.0, 0.0], 0.3), &cfg).unwrap();
        assert_eq!(y, dv(&[0.5, 0.5]));
    }

    #[test]
    fn dykstra_budget_exhaustion_is_projection_failure() {
        let cfg = ProjectionConfig {
            dykstra_max_iters: 1,
            ..Default::default()
        };
        let r = dykstra_project(&dv(&[3.0, -2.0, 0.5]), &set(&[0.1, 0.9, 0.3], 0.8), &cfg);
        assert!(matches!(r, Err(Error::ProjectionFailure(_))));
    }

    #[test]
    fn bracket_exhaustion_triggers_fallback() {
        let cfg = ProjectionConfig {
            max_bracket_doublings: 1,
            ..Default::default()
        };
        // x(ν) = (0.1ν, 1 − 0.1ν) reaches the target only at ν = 9.5
        let s = set(&[0.2, 0.0], 0.19);
        let (x, d) = project_feasible(&dv(&[0.0, 1.0]), &s, &cfg).unwrap();
        assert!(d.used_fallback);
        assert!((x - dv(&[0.95, 0.05])).amax() < 1e-6);
    }

    #[test]
    fn phi_is_nondecreasing() {
        let v = dv(&[0.3, -0.2, 1.1, 0.05]);
        let mu = dv(&[0.02, -0.01, 0.005, 0.03]);
        let path = DualPath { v: &v, mu: &mu };
        let mut prev = f64::NEG_INFINITY;
        for k in 0..400 {
            let (p, _) = path.phi(k as f64 * 0.5).unwrap();
            assert!(p >= prev - 1e-15);
            prev = p;
        }
    }
}

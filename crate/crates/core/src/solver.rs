//! Nesterov-accelerated projected gradient for
//! `min ‖L_effᵀx‖² + γ‖x‖²  s.t.  x ∈ F`.
//!
//! Each iteration takes a projected gradient step from the extrapolated
//! point `y^k`, then extrapolates with either the FISTA sequence or a
//! constant strongly convex momentum. The stopping residual is the norm of
//! the projected gradient step `‖Π_F(x − α∇f(x)) − x‖`.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_vector, seeded_rng, sym_eigenvalues_desc};
use crate::model::FactorModel;
use crate::projection::{project_feasible, FeasibleSet, ProjectionConfig};

/// Smallest backtracking step before the solve is abandoned.
pub const MIN_BACKTRACK_STEP: f64 = 1e-18;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepMode {
    /// `α = 1/L̂_f` from the power-method estimate.
    FixedAuto,
    FixedExplicit {
        alpha: f64,
    },
    Backtracking {
        alpha0: f64,
        shrink: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumMode {
    Fista,
    StronglyConvex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub step_mode: StepMode,
    pub momentum_mode: MomentumMode,
    pub tol: f64,
    pub max_iters: usize,
    pub residual_check_stride: usize,
    pub power_iters: usize,
    pub seed: u64,
    /// Inflation applied to the power-method estimate of `L_f`.
    pub safety: f64,
    /// Lower bound on the smallest singular value of `L_eff`, if known.
    pub sigma_min_hint: Option<f64>,
    /// Record `f(x^k)` at every iteration.
    pub trace_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_mode: StepMode::FixedAuto,
            momentum_mode: MomentumMode::Fista,
            tol: 1e-8,
            max_iters: 10_000,
            residual_check_stride: 1,
            power_iters: 10,
            seed: 0,
            safety: 1.05,
            sigma_min_hint: None,
            trace_objective: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::arg(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 || self.residual_check_stride == 0 || self.power_iters == 0 {
            return Err(Error::arg("iteration counts must be at least 1"));
        }
        if !(self.safety >= 1.0) {
            return Err(Error::arg("safety factor must be at least 1"));
        }
        match self.step_mode {
            StepMode::FixedExplicit { alpha } if !(alpha > 0.0) => {
                Err(Error::arg(format!("step must be positive, got {alpha}")))
            }
            StepMode::Backtracking { alpha0, shrink }
                if !(alpha0 > 0.0) || !(shrink > 0.0 && shrink < 1.0) =>
            {
                Err(Error::arg(
                    "backtracking needs alpha0 > 0 and shrink in (0, 1)",
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
    /// `f(x^k)` for `k = 0, 1, …` when tracing is enabled.
    pub objective_trace: Vec<f64>,
    pub step_used: f64,
    pub l_f_estimate: f64,
    pub m_f: f64,
    pub wall_time: f64,
    pub termination: Termination,
    pub projection_fallbacks: usize,
}

impl SolveResult {
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Residual trace as `check,residual` CSV rows.
    pub fn write_residual_csv(&self, path: &Path, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["iteration", "residual"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for (i, r) in self.residual_trace.iter().enumerate() {
            let k = (i * stride).min(self.iterations);
            w.write_record([k.to_string(), format!("{r:e}")])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureConstants {
    pub l_f: f64,
    pub m_f: f64,
}

/// Convex quadratic `f(x) = xᵀ(M + γI)x` with `M ⪰ 0` accessed through
/// products.
pub trait Quadratic: Sync {
    fn dim(&self) -> usize;
    fn ridge(&self) -> f64;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>);
    /// `M u`.
    fn gram_times(&self, u: &DVector<f64>) -> DVector<f64>;
    /// `uᵀ M u`.
    fn gram_rayleigh(&self, u: &DVector<f64>) -> f64;
}

impl Quadratic for FactorModel {
    fn dim(&self) -> usize {
        self.factor.nrows()
    }

    fn ridge(&self) -> f64 {
        self.gamma
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.factor.tr_mul(x).norm_squared() + self.gamma * x.norm_squared()
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let w = self.factor.tr_mul(x);
        let f = w.norm_squared() + self.gamma * x.norm_squared();
        let mut g = &self.factor * w;
        g.axpy(2.0 * self.gamma, x, 2.0);
        (f, g)
    }

    fn gram_times(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.factor * self.factor.tr_mul(u)
    }

    fn gram_rayleigh(&self, u: &DVector<f64>) -> f64 {
        self.factor.tr_mul(u).norm_squared()
    }
}

/// Explicit covariance `Σ`, used for cross-checks against the factor path.
pub struct DenseQuadratic<'a> {
    pub sigma: &'a DMatrix<f64>,
}

impl Quadratic for DenseQuadratic<'_> {
    fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn ridge(&self) -> f64 {
        0.0
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(self.sigma * x))
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let sx = self.sigma * x;
        (x.dot(&sx), sx * 2.0)
    }

    fn gram_times(&self, u: &DVector<f64>) -> DVector<f64> {
        self.sigma * u
    }

    fn gram_rayleigh(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(self.sigma * u))
    }
}

/// `∇f(x) = 2 L_eff(L_effᵀx) + 2γx`.
pub fn gradient(model: &FactorModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.n_assets() {
        return Err(Error::dim(format!(
            "vector of length {} for a model with {} assets",
            x.len(),
            model.n_assets()
        )));
    }
    Ok(model.value_and_gradient(x).1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// Final estimate of `‖M‖₂^{1/2}`, i.e. `σ₁(L_eff)` on the factor path.
    pub value: f64,
    /// Rayleigh-quotient estimates after each iteration.
    pub sequence: Vec<f64>,
    pub degenerate: bool,
}

/// Power method on `M` with Rayleigh quotient `√(uᵀMu)`; on a factor this is
/// `‖L_effᵀu‖`.
pub fn estimate_norm<Q: Quadratic + ?Sized>(q: &Q, iters: usize, seed: u64) -> NormEstimate {
    let n = q.dim();
    let mut u = gaussian_vector(&mut seeded_rng(seed), n);
    let norm = u.norm();
    if norm == 0.0 || n == 0 {
        return NormEstimate {
            value: 0.0,
            sequence: Vec::new(),
            degenerate: true,
        };
    }
    u /= norm;
    let mut sequence = Vec::with_capacity(iters);
    for _ in 0..iters.max(1) {
        let v = q.gram_times(&u);
        let vn = v.norm();
        if vn == 0.0 {
            return NormEstimate {
                value: 0.0,
                sequence: vec![0.0],
                degenerate: true,
            };
        }
        u = v / vn;
        sequence.push(q.gram_rayleigh(&u).max(0.0).sqrt());
    }
    NormEstimate {
        value: *sequence.last().unwrap(),
        sequence,
        degenerate: false,
    }
}

pub fn estimate_spectral_norm(model: &FactorModel, iters: usize, seed: u64) -> NormEstimate {
    estimate_norm(model, iters, seed)
}

/// `L_f = safety·2(σ̂₁² + γ)` and `m_f = 2(σ_min² + γ)` with `σ_min = 0`
/// unless a hint is given.
pub fn curvature_constants_of<Q: Quadratic + ?Sized>(
    q: &Q,
    sigma_min_hint: Option<f64>,
    cfg: &SolverConfig,
) -> CurvatureConstants {
    let est = estimate_norm(q, cfg.power_iters, cfg.seed);
    let gamma = q.ridge();
    let smin = sigma_min_hint.unwrap_or(0.0);
    CurvatureConstants {
        l_f: cfg.safety * 2.0 * (est.value * est.value + gamma),
        m_f: 2.0 * (smin * smin + gamma),
    }
}

pub fn curvature_constants(
    model: &FactorModel,
    sigma_min_hint: Option<f64>,
    cfg: &SolverConfig,
) -> CurvatureConstants {
    curvature_constants_of(model, sigma_min_hint, cfg)
}

pub fn solve(
    model: &FactorModel,
    set: &FeasibleSet,
    x0: Option<&DVector<f64>>,
    cfg: &SolverConfig,
    pcfg: &ProjectionConfig,
) -> Result<SolveResult> {
    if model.n_assets() != set.dim() {
        return Err(Error::dim("model and feasible set differ in dimension"));
    }
    solve_quadratic(model, set, x0, cfg, pcfg)
}

/// Same iteration with `∇f = 2Σx` on an explicit covariance.
pub fn solve_dense(
    sigma: &DMatrix<f64>,
    set: &FeasibleSet,
    x0: Option<&DVector<f64>>,
    cfg: &SolverConfig,
    pcfg: &ProjectionConfig,
) -> Result<SolveResult> {
    let n = sigma.nrows();
    if sigma.ncols() != n || n != set.dim() {
        return Err(Error::dim(
            "covariance must be square and match the feasible set",
        ));
    }
    let scale = crate::linalg::max_abs(sigma).max(1.0);
    if (sigma - sigma.transpose()).amax() > 1e-8 * scale {
        return Err(Error::arg("covariance is not symmetric"));
    }
    if sym_eigenvalues_desc(sigma).last().copied().unwrap_or(0.0) < -1e-8 * scale {
        return Err(Error::arg("covariance is not positive semidefinite"));
    }
    solve_quadratic(&DenseQuadratic { sigma }, set, x0, cfg, pcfg)
}

struct Projector<'a> {
    set: &'a FeasibleSet,
    cfg: &'a ProjectionConfig,
    fallbacks: usize,
}

impl Projector<'_> {
    fn project(&mut self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, d) = project_feasible(v, self.set, self.cfg)?;
        self.fallbacks += d.used_fallback as usize;
        Ok(x)
    }

    fn residual(&mut self, x: &DVector<f64>, g: &DVector<f64>, alpha: f64) -> Result<f64> {
        let mut v = x.clone();
        v.axpy(-alpha, g, 1.0);
        Ok((self.project(&v)? - x).norm())
    }
}

pub fn solve_quadratic<Q: Quadratic + ?Sized>(
    q: &Q,
    set: &FeasibleSet,
    x0: Option<&DVector<f64>>,
    cfg: &SolverConfig,
    pcfg: &ProjectionConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    pcfg.validate()?;
    set.check_attainable()?;
    let start = Instant::now();
    let n = q.dim();
    let mut proj = Projector {
        set,
        cfg: pcfg,
        fallbacks: 0,
    };

    let curv = curvature_constants_of(q, cfg.sigma_min_hint, cfg);
    let mut alpha = match cfg.step_mode {
        StepMode::FixedAuto => {
            if curv.l_f > 0.0 {
                1.0 / curv.l_f
            } else {
                1.0
            }
        }
        StepMode::FixedExplicit { alpha } => alpha,
        StepMode::Backtracking { alpha0, .. } => alpha0,
    };
    let backtracking = match cfg.step_mode {
        StepMode::Backtracking { shrink, .. } => Some(shrink),
        _ => None,
    };
    if cfg.momentum_mode == MomentumMode::StronglyConvex && !(curv.m_f > 0.0) {
        return Err(Error::arg(
            "strongly convex momentum requires a positive ridge or a sigma_min hint",
        ));
    }

    let start_point = match x0 {
        Some(x) if x.len() != n => return Err(Error::dim("initial point has the wrong length")),
        Some(x) => x.clone(),
        None => DVector::from_element(n, 1.0 / n as f64),
    };
    let mut x = proj.project(&start_point)?;
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut residual_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut termination = Termination::MaxIters;
    let mut iterations = cfg.max_iters;

    for k in 0..=cfg.max_iters {
        let check = k % cfg.residual_check_stride == 0 || k == cfg.max_iters;
        if check || cfg.trace_objective {
            let (fx, gx) = q.value_and_gradient(&x);
            if cfg.trace_objective {
                objective_trace.push(fx);
            }
            if check {
                let r = proj.residual(&x, &gx, alpha)?;
                residual_trace.push(r);
                if r <= cfg.tol {
                    termination = Termination::Tolerance;
                    iterations = k;
                    break;
                }
            }
        }
        if k == cfg.max_iters {
            break;
        }

        let (fy, gy) = q.value_and_gradient(&y);
        let x_next = match backtracking {
            None => {
                let mut v = y.clone();
                v.axpy(-alpha, &gy, 1.0);
                proj.project(&v)?
            }
            Some(shrink) => {
                if k > 0 {
                    alpha *= 2.0;
                }
                loop {
                    let mut v = y.clone();
                    v.axpy(-alpha, &gy, 1.0);
                    let cand = proj.project(&v)?;
                    // f(y+d) − f(y) − ⟨g, d⟩ = dᵀΣ̂d
                    let d = &cand - &y;
                    let curvature = q.value(&d);
                    if curvature <= d.norm_squared() / (2.0 * alpha) {
                        debug_assert!({
                            let bound = fy + gy.dot(&d) + d.norm_squared() / (2.0 * alpha);
                            q.value(&cand)
                                <= bound + 1e-12 * (fy.abs() + gy.norm() * d.norm()).max(1e-300)
                        });
                        break cand;
                    }
                    alpha *= shrink;
                    if alpha < MIN_BACKTRACK_STEP {
                        return Err(Error::numeric(format!(
                            "backtracking step fell below {MIN_BACKTRACK_STEP:e}"
                        )));
                    }
                }
            }
        };

        let beta = match cfg.momentum_mode {
            MomentumMode::Fista => {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let b = (t - 1.0) / t_next;
                t = t_next;
                b
            }
            MomentumMode::StronglyConvex => {
                let s = (alpha * curv.m_f).min(1.0).sqrt();
                (1.0 - s) / (1.0 + s)
            }
        };
        let mut y_next = x_next.clone();
        y_next.axpy(beta, &(&x_next - &x), 1.0);
        x = x_next;
        y = y_next;
    }

    Ok(SolveResult {
        objective: q.value(&x),
        x: x.iter().copied().collect(),
        iterations,
        residual_trace,
        objective_trace,
        step_used: alpha,
        l_f_estimate: curv.l_f,
        m_f: curv.m_f,
        wall_time: start.elapsed().as_secs_f64(),
        termination,
        projection_fallbacks: proj.fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, Provenance};

    fn model(factor: DMatrix<f64>, gamma: f64) -> FactorModel {
        FactorModel {
            factor,
            gamma,
            kind: if gamma > 0.0 {
                ModelKind::Str
            } else {
                ModelKind::Baseline
            },
            provenance: Provenance::default(),
        }
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&dv(v))
    }

    #[test]
    fn gradient_examples() {
        let m = model(DMatrix::identity(2, 2), 0.0);
        assert_eq!(gradient(&m, &dv(&[1.0, 2.0])).unwrap(), dv(&[2.0, 4.0]));
        let m = model(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]), 1.0);
        assert_eq!(gradient(&m, &dv(&[1.0, 1.0])).unwrap(), dv(&[4.0, 2.0]));
        assert_eq!(gradient(&m, &dv(&[0.0, 0.0])).unwrap(), dv(&[0.0, 0.0]));
        assert!(matches!(
            gradient(&m, &dv(&[1.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn power_method_examples() {
        let est = estimate_spectral_norm(&model(diag(&[3.0, 1.0]), 0.0), 20, 1);
        assert!((est.value - 3.0).abs() < 1e-6);
        assert!(est.value <= 3.0 + 1e-12);
        assert!(est
            .sequence
            .windows(2)
            .all(|w| w[1] >= w[0] * (1.0 - 1e-14)));
        let est = estimate_spectral_norm(&model(DMatrix::identity(4, 4) * 2.5, 0.0), 1, 3);
        assert!((est.value - 2.5).abs() < 1e-14);
        let est = estimate_spectral_norm(&model(DMatrix::zeros(3, 2), 0.0), 5, 3);
        assert_eq!(est.value, 0.0);
        assert!(est.degenerate);
    }

    #[test]
    fn curvature_examples() {
        let cfg = SolverConfig {
            power_iters: 60,
            ..Default::default()
        };
        let c = curvature_constants(
            &model(DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.5]), 0.1),
            None,
            &cfg,
        );
        assert!((c.m_f - 0.2).abs() < 1e-15);
        let c = curvature_constants(&model(diag(&[3.0, 1.0]), 0.0), Some(1.0), &cfg);
        assert!((c.l_f - 18.0 * 1.05).abs() < 1e-9);
        assert_eq!(c.m_f, 2.0);
        let c = curvature_constants(
            &model(
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
                0.0,
            ),
            None,
            &cfg,
        );
        assert_eq!(c.m_f, 0.0);
    }

    #[test]
    fn solve_identity_example() {
        let set = FeasibleSet::new(dv(&[0.1, 0.2]), 0.1).unwrap();
        let cfg = SolverConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let r = solve(
            &model(DMatrix::identity(2, 2), 0.0),
            &set,
            Some(&dv(&[1.0, 0.0])),
            &cfg,
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert_eq!(r.termination, Termination::Tolerance);
        assert!((r.weights() - dv(&[0.5, 0.5])).amax() < 1e-9);
        assert!((r.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn solve_diag_example() {
        let set = FeasibleSet::new(dv(&[1.0, 1.0]), 0.5).unwrap();
        let cfg = SolverConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let r = solve(
            &model(diag(&[1.0, 2.0]), 0.0),
            &set,
            None,
            &cfg,
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert!((r.weights() - dv(&[0.8, 0.2])).amax() < 1e-9);
        assert!((r.objective - 0.8).abs() < 1e-12);
    }

    #[test]
    fn optimal_start_stops_at_first_check() {
        let set = FeasibleSet::new(dv(&[1.0, 1.0]), 0.5).unwrap();
        let r = solve(
            &model(diag(&[1.0, 2.0]), 0.0),
            &set,
            Some(&dv(&[0.8, 0.2])),
            &SolverConfig::default(),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual_trace.len(), 1);
        assert!(r.final_residual() <= 1e-8);
    }

    #[test]
    fn backtracking_and_strongly_convex_modes_converge() {
        let set = FeasibleSet::new(dv(&[0.3, 0.1, 0.2]), 0.15).unwrap();
        let m = model(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5]),
            0.2,
        );
        let base = SolverConfig {
            tol: 1e-11,
            ..Default::default()
        };
        let reference = solve(&m, &set, None, &base, &ProjectionConfig::default()).unwrap();
        for (step, mom) in [
            (
                StepMode::Backtracking {
                    alpha0: 10.0,
                    shrink: 0.5,
                },
                MomentumMode::Fista,
            ),
            (StepMode::FixedAuto, MomentumMode::StronglyConvex),
            (
                StepMode::Backtracking {
                    alpha0: 1.0,
                    shrink: 0.3,
                },
                MomentumMode::StronglyConvex,
            ),
        ] {
            let cfg = SolverConfig {
                step_mode: step,
                momentum_mode: mom,
                ..base.clone()
            };
            let r = solve(&m, &set, None, &cfg, &ProjectionConfig::default()).unwrap();
            assert_eq!(r.termination, Termination::Tolerance, "{step:?} {mom:?}");
            assert!((r.objective - reference.objective).abs() < 1e-10);
        }
    }

    #[test]
    fn strongly_convex_without_curvature_is_rejected() {
        let set = FeasibleSet::new(dv(&[1.0, 1.0]), 0.5).unwrap();
        let cfg = SolverConfig {
            momentum_mode: MomentumMode::StronglyConvex,
            ..Default::default()
        };
        assert!(solve(
            &model(diag(&[1.0, 2.0]), 0.0),
            &set,
            None,
            &cfg,
            &ProjectionConfig::default()
        )
        .is_err());
    }

    #[test]
    fn infeasible_set_fails_before_iterating() {
        let set = FeasibleSet::new(dv(&[0.1, 0.2]), 0.5).unwrap();
        let r = solve(
            &model(DMatrix::identity(2, 2), 0.0),
            &set,
            None,
            &SolverConfig::default(),
            &ProjectionConfig::default(),
        );
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn dense_path_examples() {
        let set = FeasibleSet::new(dv(&[0.1, 0.2, 0.3]), 0.0).unwrap();
        let r = solve_dense(
            &DMatrix::zeros(3, 3),
            &set,
            None,
            &SolverConfig::default(),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        let r = solve_dense(
            &DMatrix::identity(3, 3),
            &set,
            None,
            &SolverConfig::default(),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert!((r.weights() - DVector::from_element(3, 1.0 / 3.0)).amax() < 1e-9);
        let asym = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(solve_dense(
            &asym,
            &set,
            None,
            &SolverConfig::default(),
            &ProjectionConfig::default()
        )
        .is_err());
    }

    #[test]
    fn dense_and_factor_paths_share_iterates() {
        let mut rng = seeded_rng(21);
        let l = crate::linalg::gaussian_matrix(&mut rng, 12, 30) * 0.1;
        let m = model(l.clone(), 0.0);
        let mu = gaussian_vector(&mut rng, 12);
        let set =
            FeasibleSet::new(mu.clone(), crate::linalg::percentile(mu.as_slice(), 0.6)).unwrap();
        let cfg = SolverConfig {
            step_mode: StepMode::FixedExplicit { alpha: 0.2 },
            max_iters: 50,
            tol: 1e-300,
            trace_objective: true,
            ..Default::default()
        };
        let a = solve(&m, &set, None, &cfg, &ProjectionConfig::default()).unwrap();
        let b = solve_dense(
            &(&l * l.transpose()),
            &set,
            None,
            &cfg,
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert!((a.weights() - b.weights()).amax() < 1e-10);
        for (fa, fb) in a.objective_trace.iter().zip(&b.objective_trace) {
            assert!((fa - fb).abs() < 1e-10);
        }
    }
}

//! Exact solutions of `min ½xᵀQx + cᵀx` over `F` for small `n` by
//! enumerating active sets.
//!
//! Every pattern of zero coordinates is combined with the return constraint
//! either active or inactive, giving `2ⁿ·2` equality-constrained problems.
//! Each is solved through its KKT system in the least-squares sense, so
//! singular `Q` is handled, and the candidate is kept only if it is primal
//! feasible with correctly signed multipliers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd_desc;
use crate::projection::FeasibleSet;

pub const MAX_ORACLE_DIM: usize = 14;

const PRIMAL_TOL: f64 = 1e-10;
const DUAL_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct QpInstance {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub feasible: FeasibleSet,
}

impl QpInstance {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>, feasible: FeasibleSet) -> Result<Self> {
        let n = feasible.dim();
        if n > MAX_ORACLE_DIM {
            return Err(Error::dim(format!(
                "oracle supports n <= {MAX_ORACLE_DIM}, got {n}"
            )));
        }
        if q.shape() != (n, n) || c.len() != n {
            return Err(Error::dim(
                "Q, c and the feasible set disagree in dimension",
            ));
        }
        let scale = crate::linalg::max_abs(&q).max(1.0);
        if (&q - q.transpose()).amax() > 1e-10 * scale {
            return Err(Error::arg("Q is not symmetric"));
        }
        Ok(Self { q, c, feasible })
    }

    /// `min xᵀΣx`, i.e. `Q = 2Σ`, `c = 0`.
    pub fn mean_variance(sigma: &DMatrix<f64>, feasible: FeasibleSet) -> Result<Self> {
        let n = sigma.nrows();
        Self::new(sigma * 2.0, DVector::zeros(n), feasible)
    }

    /// `min ‖x − v‖²` up to the constant `‖v‖²`.
    pub fn projection(v: &DVector<f64>, feasible: FeasibleSet) -> Result<Self> {
        let n = feasible.dim();
        Self::new(DMatrix::identity(n, n) * 2.0, v * -2.0, feasible)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
}

/// Constraints active at the returned point.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActiveSet {
    pub zero_indices: Vec<usize>,
    pub return_active: bool,
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    pub value: f64,
    pub active_set: ActiveSet,
    pub subsets_visited: usize,
    /// Subsets whose KKT system was inconsistent.
    pub subsets_skipped: usize,
}

enum Outcome {
    Candidate(DVector<f64>, f64),
    Rejected,
    Skipped,
}

fn evaluate(inst: &QpInstance, mask: u32, return_active: bool) -> Outcome {
    let n = inst.feasible.dim();
    let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
    if free.is_empty() {
        return Outcome::Skipped;
    }
    let k = free.len();
    let m = k + 1 + return_active as usize;
    let mu = &inst.feasible.mu;
    let mut kkt = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = inst.q[(i, j)];
        }
        kkt[(a, k)] = -1.0;
        kkt[(k, a)] = 1.0;
        rhs[a] = -inst.c[i];
        if return_active {
            kkt[(a, k + 1)] = -mu[i];
            kkt[(k + 1, a)] = mu[i];
        }
    }
    rhs[k] = 1.0;
    if return_active {
        rhs[k + 1] = inst.feasible.r_target;
    }
    let Ok((u, sv, v)) = svd_desc(&kkt) else {
        return Outcome::Skipped;
    };
    let cutoff = 1e-12 * sv[0].max(f64::MIN_POSITIVE);
    let mut coeffs = u.tr_mul(&rhs);
    for (c, s) in coeffs.iter_mut().zip(&sv) {
        *c = if *s > cutoff { *c / s } else { 0.0 };
    }
    let sol = v * coeffs;
    let scale = 1.0 + rhs.amax() + crate::linalg::max_abs(&kkt);
    if (&kkt * &sol - &rhs).amax() > 1e-9 * scale {
        return Outcome::Skipped;
    }

    let mut x = DVector::zeros(n);
    for (a, &i) in free.iter().enumerate() {
        x[i] = sol[a];
    }
    if x.iter().any(|&v| v < -PRIMAL_TOL) {
        return Outcome::Rejected;
    }
    let r_tol = PRIMAL_TOL * inst.feasible.r_target.abs().max(1.0);
    if mu.dot(&x) < inst.feasible.r_target - r_tol {
        return Outcome::Rejected;
    }
    let lambda = sol[k];
    let nu = if return_active { sol[k + 1] } else { 0.0 };
    let g_scale = crate::linalg::max_abs(&inst.q) + inst.c.amax() + lambda.abs() + 1e-300;
    let mu_scale = mu.amax().max(f64::MIN_POSITIVE);
    if nu < -DUAL_TOL * g_scale / mu_scale {
        return Outcome::Rejected;
    }
    let grad = &inst.q * &x + &inst.c;
    for i in 0..n {
        if mask & (1 << i) != 0 {
            let s = grad[i] - lambda - nu * mu[i];
            if s < -DUAL_TOL * g_scale {
                return Outcome::Rejected;
            }
        }
    }
    let x = x.map(|v| v.max(0.0));
    let value = inst.value(&x);
    Outcome::Candidate(x, value)
}

fn active_set_of(n: usize, mask: u32, return_active: bool) -> ActiveSet {
    ActiveSet {
        zero_indices: (0..n).filter(|i| mask & (1 << i) != 0).collect(),
        return_active,
    }
}

pub fn solve_exact(inst: &QpInstance) -> Result<OracleSolution> {
    let n = inst.feasible.dim();
    if n > MAX_ORACLE_DIM {
        return Err(Error::dim(format!(
            "oracle supports n <= {MAX_ORACLE_DIM}, got {n}"
        )));
    }
    inst.feasible.check_attainable()?;
    let total = 1u32 << n;
    let outcomes: Vec<(u32, bool, Outcome)> = (0..2 * total)
        .into_par_iter()
        .map(|idx| {
            let (mask, active) = (idx % total, idx >= total);
            (mask, active, evaluate(inst, mask, active))
        })
        .collect();

    let mut skipped = 0;
    let mut best: Option<(DVector<f64>, f64, ActiveSet)> = None;
    for (mask, active, outcome) in outcomes {
        match outcome {
            Outcome::Skipped => skipped += 1,
            Outcome::Rejected => {}
            Outcome::Candidate(x, value) => {
                let set = active_set_of(n, mask, active);
                let better = match &best {
                    None => true,
                    Some((_, bv, bs)) => {
                        let tie = TIE_TOL * bv.abs().max(1.0);
                        value < bv - tie || ((value - bv).abs() <= tie && set < *bs)
                    }
                };
                if better {
                    best = Some((x, value, set));
                }
            }
        }
    }
    let (x, value, active_set) =
        best.ok_or_else(|| Error::Infeasible("no active set yields a feasible KKT point".into()))?;
    Ok(OracleSolution {
        x,
        value,
        active_set,
        subsets_visited: 2 * total as usize,
        subsets_skipped: skipped,
    })
}

pub fn project_exact(v: &DVector<f64>, feasible: &FeasibleSet) -> Result<DVector<f64>> {
    Ok(solve_exact(&QpInstance::projection(v, feasible.clone())?)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn fs(mu: &[f64], r: f64) -> FeasibleSet {
        FeasibleSet::new(dv(mu), r).unwrap()
    }

    #[test]
    fn identity_example() {
        let inst = QpInstance::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            fs(&[0.1, 0.2], 0.1),
        )
        .unwrap();
        let sol = solve_exact(&inst).unwrap();
        assert!((sol.x - dv(&[0.5, 0.5])).amax() < 1e-12);
        assert!((sol.value - 0.5).abs() < 1e-12);
        assert_eq!(sol.subsets_visited, 8);
        assert!(!sol.active_set.return_active);
    }

    #[test]
    fn diag_example() {
        let q = DMatrix::from_diagonal(&dv(&[2.0, 8.0]));
        let sol =
            solve_exact(&QpInstance::new(q, DVector::zeros(2), fs(&[1.0, 1.0], 0.5)).unwrap())
                .unwrap();
        assert!((sol.x - dv(&[0.8, 0.2])).amax() < 1e-12);
        assert!((sol.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn unattainable_target_is_infeasible() {
        let inst =
            QpInstance::mean_variance(&DMatrix::identity(2, 2), fs(&[0.1, 0.2], 0.5)).unwrap();
        assert!(matches!(solve_exact(&inst), Err(Error::Infeasible(_))));
    }

    #[test]
    fn projection_examples() {
        let f = fs(&[1.0, 0.0], 0.3);
        let v = dv(&[0.6, 0.4]);
        assert!((project_exact(&v, &f).unwrap() - &v).amax() < 1e-12);
        let x = project_exact(&dv(&[0.5, 0.5]), &fs(&[1.0, 0.0], 0.9)).unwrap();
        assert!((x - dv(&[0.9, 0.1])).amax() < 1e-12);
        let x = project_exact(&dv(&[0.2, 0.1, 0.0]), &fs(&[0.0, 0.0, 0.0], -1.0)).unwrap();
        assert!((x - dv(&[13.0 / 30.0, 10.0 / 30.0, 7.0 / 30.0])).amax() < 1e-12);
    }

    #[test]
    fn singular_q_is_handled() {
        // rank-one covariance: many minimizers, value is unique
        let l = dv(&[1.0, 1.0, 0.0]);
        let sigma = &l * l.transpose();
        let sol =
            solve_exact(&QpInstance::mean_variance(&sigma, fs(&[0.0, 0.0, 0.1], 0.0)).unwrap())
                .unwrap();
        assert!(sol.value.abs() < 1e-12);
        assert_eq!(sol.subsets_visited, 16);
    }

    #[test]
    fn ties_pick_smallest_active_set() {
        // zero objective: every feasible point is optimal
        let inst = QpInstance::new(
            DMatrix::zeros(3, 3),
            DVector::zeros(3),
            fs(&[0.0, 0.0, 0.0], 0.0),
        )
        .unwrap();
        let sol = solve_exact(&inst).unwrap();
        let all = (0..3).all(|i| sol.x[i] >= 0.0);
        assert!(all);
        assert!((sol.x.sum() - 1.0).abs() < 1e-12);
        assert_eq!(
            sol.active_set,
            ActiveSet {
                zero_indices: vec![],
                return_active: false
            }
        );
    }

    #[test]
    fn rejects_large_or_asymmetric() {
        let n = MAX_ORACLE_DIM + 1;
        let f = FeasibleSet::new(DVector::zeros(n), 0.0).unwrap();
        assert!(QpInstance::new(DMatrix::identity(n, n), DVector::zeros(n), f).is_err());
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(QpInstance::new(q, DVector::zeros(2), fs(&[0.0, 0.0], 0.0)).is_err());
    }
}

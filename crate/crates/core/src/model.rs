//! Factor models `f(x) = ‖L_effᵀ x‖² + γ‖x‖²` for the baseline, sketched and
//! sketch–truncate–ridge covariances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::CovarianceFactor;
use crate::sketch::{self, SketchConfig, SketchOperator};
use crate::spectrum::{self, TruncationRule, DEFAULT_RANK_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Sketch,
    Str,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Sketch => "sketch",
            ModelKind::Str => "str",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(ModelKind::Baseline),
            "sketch" => Ok(ModelKind::Sketch),
            "str" => Ok(ModelKind::Str),
            other => Err(Error::arg(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RidgePolicy {
    TargetKappa { kappa_target: f64 },
    Explicit { gamma: f64 },
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy::TargetKappa { kappa_target: 1e3 }
    }
}

impl RidgePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RidgePolicy::TargetKappa { kappa_target } if !(kappa_target > 1.0) => Err(Error::arg(
                format!("kappa_target must exceed 1, got {kappa_target}"),
            )),
            RidgePolicy::Explicit { gamma } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                Error::arg(format!("explicit gamma must be positive, got {gamma}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn gamma(&self, sigma1: f64) -> Result<f64> {
        match *self {
            RidgePolicy::TargetKappa { kappa_target } => {
                ridge_for_target_kappa(sigma1, kappa_target)
            }
            RidgePolicy::Explicit { gamma } => {
                self.validate()?;
                Ok(gamma)
            }
        }
    }
}

/// How the STR truncation level is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TruncationLevel {
    Rule(TruncationRule),
    Fixed { ell: usize },
}

impl Default for TruncationLevel {
    fn default() -> Self {
        TruncationLevel::Rule(TruncationRule::default())
    }
}

/// How a model was built; serialized into experiment logs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sketch: Option<SketchConfig>,
    pub ell: Option<usize>,
    pub truncation: Option<TruncationLevel>,
    pub ridge: Option<RidgePolicy>,
    /// Leading singular value of the sketched factor.
    pub sigma1: Option<f64>,
    pub retained_singular_values: Vec<f64>,
    /// `σ̃_{ℓ+1}` of the sketched factor, zero when the spectrum is exhausted.
    pub next_singular_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub factor: DMatrix<f64>,
    pub gamma: f64,
    pub kind: ModelKind,
    pub provenance: Provenance,
}

impl FactorModel {
    pub fn n_assets(&self) -> usize {
        self.factor.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.factor.ncols()
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_assets() {
            return Err(Error::dim(format!(
                "vector of length {} for a model with {} assets",
                x.len(),
                self.n_assets()
            )));
        }
        Ok(())
    }

    /// `‖L_effᵀ x‖² + γ‖x‖²`.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.factor.tr_mul(x).norm_squared() + self.gamma * x.norm_squared())
    }

    /// `xᵀ(L_eff(L_effᵀ x)) + γ xᵀx`; same value as [`Self::objective`] by a
    /// different evaluation order.
    pub fn objective_expanded(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let w = self.factor.tr_mul(x);
        Ok(x.dot(&(&self.factor * w)) + self.gamma * x.dot(x))
    }

    /// `Σ̂ x = L_eff(L_effᵀ x) + γx`.
    pub fn covariance_times(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let w = self.factor.tr_mul(x);
        let mut out = &self.factor * w;
        out.axpy(self.gamma, x, 1.0);
        Ok(out)
    }

    /// Dense `L_eff L_effᵀ + γI`; test scale only.
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let n = self.n_assets();
        &self.factor * self.factor.transpose() + DMatrix::identity(n, n) * self.gamma
    }
}

pub fn build_baseline(l: &CovarianceFactor) -> FactorModel {
    FactorModel {
        factor: l.factor.clone(),
        gamma: 0.0,
        kind: ModelKind::Baseline,
        provenance: Provenance::default(),
    }
}

pub fn build_sketch(l: &CovarianceFactor, cfg: &SketchConfig) -> Result<FactorModel> {
    let sk = sketch::sketch(&l.factor, cfg)?;
    Ok(FactorModel {
        factor: sk.factor,
        gamma: 0.0,
        kind: ModelKind::Sketch,
        provenance: Provenance {
            sketch: Some(*cfg),
            ..Provenance::default()
        },
    })
}

/// Sketched model from an explicit operator, e.g. the identity CountSketch.
pub fn build_sketch_with(l: &CovarianceFactor, op: &SketchOperator) -> Result<FactorModel> {
    Ok(FactorModel {
        factor: op.apply(&l.factor)?,
        gamma: 0.0,
        kind: ModelKind::Sketch,
        provenance: Provenance::default(),
    })
}

/// `γ = σ₁²/(κ_tar − 1)`, giving `κ(Σ̂) = κ_tar`.
pub fn ridge_for_target_kappa(sigma1: f64, kappa_target: f64) -> Result<f64> {
    if !(kappa_target > 1.0) {
        return Err(Error::arg(format!(
            "kappa_target must exceed 1, got {kappa_target}"
        )));
    }
    if !(sigma1 > 0.0) {
        return Err(Error::DegenerateSpectrum(
            "leading singular value is zero; no positive ridge can be derived".into(),
        ));
    }
    Ok(sigma1 * sigma1 / (kappa_target - 1.0))
}

/// Smallest ridge above which `κ(Σ̂) < κ(Σ)` is guaranteed:
/// `(1+ε) λ_min λ_max / (λ_max − (1+ε) λ_min)`.
pub fn kappa_improvement_threshold(lambda_min: f64, lambda_max: f64, epsilon: f64) -> Result<f64> {
    if !(lambda_min > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::arg("need lambda_min > 0 and epsilon >= 0"));
    }
    let a = (1.0 + epsilon) * lambda_min;
    let denom = lambda_max - a;
    if !(denom > 0.0) {
        return Err(Error::ConditionInapplicable(format!(
            "lambda_max {lambda_max} does not exceed (1+eps)·lambda_min {a}"
        )));
    }
    Ok(a * lambda_max / denom)
}

/// Sketch, truncate with `rule`, and lift with the ridge from `ridge`.
pub fn build_str(
    l: &CovarianceFactor,
    cfg: &SketchConfig,
    rule: &TruncationRule,
    ridge: &RidgePolicy,
) -> Result<FactorModel> {
    build_str_with_level(l, cfg, TruncationLevel::Rule(*rule), ridge)
}

pub fn build_str_with_level(
    l: &CovarianceFactor,
    cfg: &SketchConfig,
    level: TruncationLevel,
    ridge: &RidgePolicy,
) -> Result<FactorModel> {
    let sk = sketch::sketch(&l.factor, cfg)?;
    str_from_sketched(&sk.factor, Some(*cfg), level, ridge)
}

/// Truncate-and-ridge stages applied to an already sketched factor `L̃`.
pub fn str_from_sketched(
    ltilde: &DMatrix<f64>,
    sketch: Option<SketchConfig>,
    level: TruncationLevel,
    ridge: &RidgePolicy,
) -> Result<FactorModel> {
    ridge.validate()?;
    let svd = spectrum::thin_svd(ltilde, DEFAULT_RANK_TOL)?;
    let sv = &svd.singular_values;
    if sv.is_empty() {
        return Err(Error::DegenerateSpectrum("sketched factor is zero".into()));
    }
    let ell = match level {
        TruncationLevel::Rule(rule) => spectrum::select_truncation_level(sv, &rule)?,
        TruncationLevel::Fixed { ell } => {
            if ell == 0 {
                return Err(Error::arg("truncation level must be at least 1"));
            }
            ell.min(sv.len())
        }
    };
    let sigma1 = sv[0];
    let gamma = ridge.gamma(sigma1)?;
    if !(gamma > 0.0) {
        return Err(Error::numeric(format!(
            "ridge must be positive, got {gamma}"
        )));
    }
    Ok(FactorModel {
        factor: svd.scaled_left(ell),
        gamma,
        kind: ModelKind::Str,
        provenance: Provenance {
            sketch,
            ell: Some(ell),
            truncation: Some(level),
            ridge: Some(*ridge),
            sigma1: Some(sigma1),
            retained_singular_values: sv[..ell].to_vec(),
            next_singular_value: Some(sv.get(ell).copied().unwrap_or(0.0)),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{
        gaussian_matrix, gaussian_vector, seeded_rng, spectral_norm, sym_eigenvalues_desc,
    };
    use crate::sketch::{CountSketch, SketchKind};

    fn factor(m: DMatrix<f64>) -> CovarianceFactor {
        let n = m.nrows();
        CovarianceFactor {
            factor: m,
            mean: DVector::zeros(n),
        }
    }

    #[test]
    fn baseline_objective_examples() {
        let m = build_baseline(&factor(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])));
        let x = DVector::from_vec(vec![0.7]);
        assert!((m.objective(&x).unwrap() - 2.0 * 0.49).abs() < 1e-15);
        assert_eq!(m.gamma, 0.0);
        let z = build_baseline(&factor(DMatrix::zeros(3, 4)));
        assert_eq!(
            z.objective(&gaussian_vector(&mut seeded_rng(1), 3))
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let m = build_baseline(&factor(DMatrix::zeros(3, 4)));
        assert!(matches!(
            m.objective(&DVector::zeros(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn identity_sketch_reproduces_baseline() {
        let l = factor(gaussian_matrix(&mut seeded_rng(2), 4, 9));
        let base = build_baseline(&l);
        let sk = build_sketch_with(&l, &SketchOperator::Count(CountSketch::identity(9))).unwrap();
        let x = gaussian_vector(&mut seeded_rng(3), 4);
        assert_eq!(sk.objective(&x).unwrap(), base.objective(&x).unwrap());
        assert_eq!(sk.kind, ModelKind::Sketch);
    }

    #[test]
    fn sketch_model_respects_measured_distortion() {
        let mut rng = seeded_rng(6);
        let l = factor(gaussian_matrix(&mut rng, 8, 3) * gaussian_matrix(&mut rng, 3, 60));
        let cfg = SketchConfig::new(SketchKind::GaussianJl, 30, 5);
        let sk = build_sketch(&l, &cfg).unwrap();
        let eps = sketch::subspace_distortion(&l.factor, &sk.factor, 1e-12).unwrap();
        let base = build_baseline(&l);
        for _ in 0..100 {
            let x = gaussian_vector(&mut rng, 8);
            let a = base.objective(&x).unwrap();
            let b = sk.objective(&x).unwrap();
            assert!((a - b).abs() <= eps * a * (1.0 + 1e-9) + 1e-14);
        }
    }

    #[test]
    fn ridge_examples() {
        let g = ridge_for_target_kappa(2.0, 5.0).unwrap();
        assert_eq!(g, 1.0);
        assert_eq!((4.0 + g) / g, 5.0);
        let mut prev = f64::INFINITY;
        for k in [2.0, 10.0, 1e3, 1e6, 1e9] {
            let g = ridge_for_target_kappa(1.0, k).unwrap();
            assert!(g > 0.0 && g < prev);
            prev = g;
        }
        assert!(matches!(
            ridge_for_target_kappa(0.0, 5.0),
            Err(Error::DegenerateSpectrum(_))
        ));
        assert!(matches!(
            ridge_for_target_kappa(1.0, 1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn threshold_examples() {
        assert!(
            (kappa_improvement_threshold(1.0, 100.0, 0.0).unwrap() - 100.0 / 99.0).abs() < 1e-14
        );
        assert!(
            (kappa_improvement_threshold(1.0, 100.0, 0.1).unwrap() - 110.0 / 98.9).abs() < 1e-12
        );
        assert!(matches!(
            kappa_improvement_threshold(1.0, 1.1, 0.1),
            Err(Error::ConditionInapplicable(_))
        ));
    }

    #[test]
    fn exact_rank_recovery() {
        let mut rng = seeded_rng(10);
        let l = factor(gaussian_matrix(&mut rng, 6, 2) * gaussian_matrix(&mut rng, 2, 12));
        let cfg = SketchConfig::new(SketchKind::GaussianJl, 12, 1);
        let m = build_str(
            &l,
            &cfg,
            &TruncationRule::default(),
            &RidgePolicy::Explicit { gamma: 0.1 },
        )
        .unwrap();
        assert_eq!(m.provenance.ell, Some(2));
        let s1 = spectral_norm(&l.factor);
        // a Gaussian sketch with s = T is not an isometry; the truncation is
        // exact relative to the sketched covariance
        let lt = sketch::gaussian_jl_sketch(&l.factor, 12, 1).unwrap().factor;
        let diff_sk = &m.factor * m.factor.transpose() - &lt * lt.transpose();
        assert!(spectral_norm(&diff_sk) <= 1e-8 * s1 * s1);
        // with the identity sketch the recovery is exact against LLᵀ
        let id = SketchOperator::Count(CountSketch::identity(12))
            .apply(&l.factor)
            .unwrap();
        let m2 = str_from_sketched(
            &id,
            None,
            TruncationLevel::default(),
            &RidgePolicy::Explicit { gamma: 0.1 },
        )
        .unwrap();
        assert_eq!(m2.provenance.ell, Some(2));
        let d2 = &m2.factor * m2.factor.transpose() - l.covariance();
        assert!(spectral_norm(&d2) <= 1e-8 * s1 * s1);
    }

    #[test]
    fn str_spectrum_and_condition_number() {
        let mut rng = seeded_rng(12);
        let l = factor(gaussian_matrix(&mut rng, 7, 20));
        let cfg = SketchConfig::new(SketchKind::Countsketch, 10, 2);
        let m = build_str_with_level(
            &l,
            &cfg,
            TruncationLevel::Fixed { ell: 3 },
            &RidgePolicy::TargetKappa { kappa_target: 50.0 },
        )
        .unwrap();
        let eig = sym_eigenvalues_desc(&m.dense_covariance());
        let sv = &m.provenance.retained_singular_values;
        for i in 0..3 {
            assert!((eig[i] - (sv[i] * sv[i] + m.gamma)).abs() <= 1e-10 * eig[0]);
        }
        for e in &eig[3..] {
            assert!((e - m.gamma).abs() <= 1e-10 * eig[0]);
        }
        let kappa = eig[0] / eig[6];
        assert!((kappa - 50.0).abs() <= 1e-10 * 50.0);
    }

    #[test]
    fn dropping_right_factor_keeps_objective_and_gradient() {
        let mut rng = seeded_rng(13);
        let lt = gaussian_matrix(&mut rng, 6, 9);
        let svd = spectrum::thin_svd(&lt, 1e-12).unwrap();
        let ell = 4;
        let full = svd.u.columns(0, ell)
            * DMatrix::from_diagonal(&DVector::from_column_slice(&svd.singular_values[..ell]))
            * svd.v.columns(0, ell).transpose();
        let narrow = svd.scaled_left(ell);
        for _ in 0..20 {
            let x = gaussian_vector(&mut rng, 6);
            let a = full.tr_mul(&x).norm_squared();
            let b = narrow.tr_mul(&x).norm_squared();
            assert!((a - b).abs() <= 1e-10 * a.max(1.0));
            let ga = &full * full.tr_mul(&x);
            let gb = &narrow * narrow.tr_mul(&x);
            assert!((ga - gb).amax() <= 1e-10);
        }
    }

    #[test]
    fn objective_evaluation_orders_agree() {
        let mut rng = seeded_rng(14);
        let m = FactorModel {
            factor: gaussian_matrix(&mut rng, 10, 4),
            gamma: 0.3,
            kind: ModelKind::Str,
            provenance: Provenance::default(),
        };
        for _ in 0..50 {
            let x = gaussian_vector(&mut rng, 10);
            let a = m.objective(&x).unwrap();
            let b = m.objective_expanded(&x).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn str_rejects_zero_factor_and_bad_policy() {
        let l = factor(DMatrix::zeros(3, 5));
        let cfg = SketchConfig::new(SketchKind::GaussianJl, 3, 1);
        assert!(matches!(
            build_str(
                &l,
                &cfg,
                &TruncationRule::default(),
                &RidgePolicy::default()
            ),
            Err(Error::DegenerateSpectrum(_))
        ));
        let l = factor(gaussian_matrix(&mut seeded_rng(1), 3, 5));
        assert!(build_str(
            &l,
            &cfg,
            &TruncationRule::default(),
            &RidgePolicy::Explicit { gamma: 0.0 }
        )
        .is_err());
    }

    #[test]
    fn ridge_policy_serde_round_trip() {
        let p = RidgePolicy::TargetKappa {
            kappa_target: 500.0,
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"mode":"target_kappa","kappa_target":500.0}"#);
        assert_eq!(serde_json::from_str::<RidgePolicy>(&s).unwrap(), p);
    }
}

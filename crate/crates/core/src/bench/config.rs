//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Compounding;
use crate::model::{ModelKind, RidgePolicy};
use crate::panel::SyntheticSpec;
use crate::projection::ProjectionConfig;
use crate::sketch::SketchKind;
use crate::solver::SolverConfig;
use crate::spectrum::TruncationRule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceConfig {
    Synthetic(SyntheticSpec),
    Panel {
        path: PathBuf,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default = "default_true")]
        has_header: bool,
    },
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig::Synthetic(SyntheticSpec::default())
    }
}

/// Expected returns and the return target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnConfig {
    /// Standard deviation of the synthetic expected returns.
    pub mu_scale: f64,
    /// Quantile of the expected returns used as `R_target`.
    pub target_quantile: f64,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        Self {
            mu_scale: 1e-3,
            target_quantile: 0.6,
        }
    }
}

/// Axes of the approximation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Models evaluated at every sweep point.
    pub models: Vec<ModelKind>,
    pub sketch_kinds: Vec<SketchKind>,
    pub s_over_ell: Vec<f64>,
    /// Retained-energy levels mapped to `ℓ` on the dense spectrum. When
    /// empty, `ℓ` comes from `truncation` on the sketched spectrum.
    pub etas: Vec<f64>,
    pub truncation: TruncationRule,
    pub ridge: RidgePolicy,
    /// Optional `γ/‖Σ‖₂` axis; overrides `ridge` when nonempty.
    pub gamma_fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelKind::Sketch, ModelKind::Str],
            sketch_kinds: vec![SketchKind::GaussianJl, SketchKind::Countsketch],
            s_over_ell: vec![2.0],
            etas: vec![0.98],
            truncation: TruncationRule::default(),
            ridge: RidgePolicy::TargetKappa {
                kappa_target: 500.0,
            },
            gamma_fractions: Vec::new(),
        }
    }
}

/// Convergence-rate experiment on an instance small enough for the exact
/// oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub n: usize,
    pub t: usize,
    /// Sketch width of the rank-deficient convex case.
    pub sketch_size: usize,
    /// `κ(Σ̂)` target of the strongly convex STR case.
    pub kappa_target: f64,
    pub str_ell: usize,
    pub iterations: usize,
    /// Fit window for the convex log-log slope.
    pub fit_start: usize,
    pub fit_end: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            n: 10,
            t: 40,
            sketch_size: 6,
            kappa_target: 5.0,
            str_ell: 3,
            iterations: 200,
            fit_start: 10,
            fit_end: 200,
        }
    }
}

/// Solver benchmark sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBenchConfig {
    pub sizes: Vec<usize>,
    /// `T = periods_per_asset · n`.
    pub periods_per_asset: usize,
    pub sketch_kind: SketchKind,
    pub s_over_ell: f64,
    pub eta: f64,
}

impl Default for SolverBenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10, 200],
            periods_per_asset: 4,
            sketch_kind: SketchKind::Countsketch,
            s_over_ell: 2.0,
            eta: 0.98,
        }
    }
}

/// Train/test protocol for panels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealConfig {
    /// Fraction of periods used for training, unless `split_index` is set.
    pub train_fraction: f64,
    pub split_index: Option<usize>,
    pub sketch_kind: SketchKind,
    pub s_over_ell: f64,
    pub eta: f64,
    pub compounding: Compounding,
}

impl Default for RealConfig {
    fn default() -> Self {
        Self {
            train_fraction: 2.0 / 3.0,
            split_index: None,
            sketch_kind: SketchKind::Countsketch,
            s_over_ell: 2.0,
            eta: 0.98,
            compounding: Compounding::Simple,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub warmup: usize,
    pub instance: InstanceConfig,
    pub returns: ReturnConfig,
    pub sweep: SweepConfig,
    pub rate: RateConfig,
    pub solver_bench: SolverBenchConfig,
    pub real: RealConfig,
    pub solver: SolverConfig,
    pub projection: ProjectionConfig,
    /// Tolerance for reference (full-model) solves.
    pub reference_tol: f64,
    pub output: Option<PathBuf>,
    /// Directory for CSV side outputs such as residual traces.
    pub csv_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repetitions: 1,
            warmup: 1,
            instance: InstanceConfig::default(),
            returns: ReturnConfig::default(),
            sweep: SweepConfig::default(),
            rate: RateConfig::default(),
            solver_bench: SolverBenchConfig::default(),
            real: RealConfig::default(),
            solver: SolverConfig {
                tol: 1e-9,
                max_iters: 20_000,
                ..SolverConfig::default()
            },
            projection: ProjectionConfig::default(),
            reference_tol: 1e-10,
            output: None,
            csv_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if let InstanceConfig::Synthetic(spec) = &self.instance {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.returns.target_quantile >= 0.0 && self.returns.target_quantile <= 1.0) {
            return bad("target_quantile must lie in [0, 1]");
        }
        if self.sweep.models.is_empty() {
            return bad("sweep.models must not be empty");
        }
        if self.sweep.s_over_ell.iter().any(|r| !(*r > 0.0)) {
            return bad("s_over_ell entries must be positive");
        }
        if self.sweep.etas.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("eta entries must lie in (0, 1)");
        }
        if self.sweep.gamma_fractions.iter().any(|g| !(*g > 0.0)) {
            return bad("gamma fractions must be positive");
        }
        if !(self.reference_tol > 0.0) {
            return bad("reference_tol must be positive");
        }
        if !(self.real.train_fraction > 0.0 && self.real.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        self.solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.projection
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

//! Experiment harness: approximation sweeps, rate experiments, solver
//! timing and train/test runs on return panels.

pub mod config;
pub mod report;

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{
    derive_seed, gaussian_vector, median, percentile, seeded_rng, sym_eigenvalues_desc,
};
use crate::metrics::{
    annualize_with, conditioning_report, objective_gap, portfolio_returns, relative_spectral_error,
};
use crate::model::{
    build_baseline, build_sketch_with, str_from_sketched, FactorModel, ModelKind, RidgePolicy,
    TruncationLevel,
};
use crate::oracle::{solve_exact, QpInstance, MAX_ORACLE_DIM};
use crate::panel::{
    center_and_factor, generate_synthetic, load_panel, CovarianceFactor, CsvFormat, ReturnPanel,
    SyntheticSpec,
};
use crate::projection::{FeasibleSet, ProjectionConfig};
use crate::sketch::{SketchConfig, SketchKind};
use crate::solver::{solve, solve_dense, MomentumMode, SolveResult, SolverConfig, StepMode};
use crate::spectrum::{
    cumulative_energy, energy_rank, select_truncation_level_from_eigenvalues, thin_svd,
    DEFAULT_RANK_TOL,
};

pub use config::{ExperimentConfig, InstanceConfig};
pub use report::{BenchReport, BenchRow, RowParams, RowSeeds, SeedRecord};

const TAG_INSTANCE: u64 = 0x1157;
const TAG_MU: u64 = 0x3e4a;
const TAG_SKETCH: u64 = 0x5c37;
const TAG_RATE: u64 = 0x4a7e;
const TAG_SOLVER: u64 = 0x50b3;

/// Timing-mode residual stride and projection tolerance.
pub const TIMING_RESIDUAL_STRIDE: usize = 5;
pub const TIMING_PROJECTION_TOL: f64 = 1e-8;

/// A return panel with its dense covariance, spectrum, feasible set and the
/// full-model optimum.
#[derive(Clone, Debug)]
pub struct Instance {
    pub panel: ReturnPanel,
    pub factor: CovarianceFactor,
    pub sigma: DMatrix<f64>,
    /// Eigenvalues of `Σ`, descending.
    pub eigenvalues: Vec<f64>,
    pub feasible: FeasibleSet,
    pub reference: Reference,
    pub seeds: RowSeeds,
}

/// Full-model optimum, from the oracle when `n` allows it.
#[derive(Clone, Debug)]
pub struct Reference {
    pub x: DVector<f64>,
    pub value: f64,
    pub exact: bool,
}

/// `R_target` as the `q`-quantile of the expected returns.
pub fn return_target(mu: &DVector<f64>, q: f64) -> f64 {
    percentile(mu.as_slice(), q)
}

/// Minimizer of `xᵀΣx` over `F`: exact enumeration for `n ≤ 14`, otherwise a
/// dense solve to `tol`, with strongly convex momentum when `Σ ≻ 0`.
pub fn reference_optimum(
    sigma: &DMatrix<f64>,
    eigenvalues: &[f64],
    feasible: &FeasibleSet,
    tol: f64,
    base: &SolverConfig,
    pcfg: &ProjectionConfig,
) -> Result<Reference> {
    let n = sigma.nrows();
    if n <= MAX_ORACLE_DIM {
        let sol = solve_exact(&QpInstance::mean_variance(sigma, feasible.clone())?)?;
        return Ok(Reference {
            x: sol.x,
            value: sol.value,
            exact: true,
        });
    }
    let lambda_min = eigenvalues.last().copied().unwrap_or(0.0);
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0);
    let strongly = lambda_min > 1e-12 * lambda_max.max(f64::MIN_POSITIVE);
    let cfg = SolverConfig {
        step_mode: StepMode::FixedAuto,
        momentum_mode: if strongly {
            MomentumMode::StronglyConvex
        } else {
            MomentumMode::Fista
        },
        sigma_min_hint: strongly.then(|| (0.99 * lambda_min).sqrt()),
        tol,
        max_iters: base.max_iters.max(50_000),
        residual_check_stride: 1,
        trace_objective: false,
        ..base.clone()
    };
    let res = solve_dense(sigma, feasible, None, &cfg, pcfg)?;
    Ok(Reference {
        value: res.objective,
        x: res.weights(),
        exact: false,
    })
}

impl Instance {
    /// Builds the instance around an explicit panel and expected returns.
    pub fn from_panel(
        panel: ReturnPanel,
        mu: DVector<f64>,
        target_quantile: f64,
        cfg: &ExperimentConfig,
        seeds: RowSeeds,
    ) -> Result<Self> {
        let factor = center_and_factor(&panel)?;
        let sigma = factor.covariance();
        let eigenvalues = sym_eigenvalues_desc(&sigma);
        let r_target = return_target(&mu, target_quantile);
        let feasible = FeasibleSet::new(mu, r_target)?;
        let reference = reference_optimum(
            &sigma,
            &eigenvalues,
            &feasible,
            cfg.reference_tol,
            &cfg.solver,
            &cfg.projection,
        )?;
        Ok(Self {
            panel,
            factor,
            sigma,
            eigenvalues,
            feasible,
            reference,
            seeds,
        })
    }

    /// Synthetic panel for repetition `rep` with `μ ~ N(0, mu_scale²)`.
    pub fn synthetic(
        spec: &SyntheticSpec,
        cfg: &ExperimentConfig,
        tag: u64,
        rep: usize,
    ) -> Result<Self> {
        let instance_seed = derive_seed(cfg.seed, tag ^ spec.seed, rep as u64);
        let mu_seed = derive_seed(cfg.seed, TAG_MU ^ tag, rep as u64);
        let spec = SyntheticSpec {
            seed: instance_seed,
            ..spec.clone()
        };
        let panel = generate_synthetic(&spec)?;
        let mu = gaussian_vector(&mut seeded_rng(mu_seed), spec.n) * cfg.returns.mu_scale;
        let seeds = RowSeeds {
            instance: instance_seed,
            sketch: None,
            mu: Some(mu_seed),
            solver: cfg.solver.seed,
        };
        Self::from_panel(panel, mu, cfg.returns.target_quantile, cfg, seeds)
    }

    pub fn n(&self) -> usize {
        self.panel.n_assets()
    }

    pub fn t(&self) -> usize {
        self.panel.n_periods()
    }

    /// `ℓ` retaining a fraction `eta` of the energy of `Σ`.
    pub fn ell_for_energy(&self, eta: f64) -> Result<usize> {
        let (energy, degenerate) = cumulative_energy(&self.eigenvalues);
        if degenerate {
            return Err(Error::DegenerateSpectrum(
                "covariance has zero energy".into(),
            ));
        }
        energy_rank(&energy, eta)
    }

    /// Records spectral error, conditioning and gaps of `model` into `row`,
    /// solving it with `solver`.
    pub fn evaluate(
        &self,
        model: &FactorModel,
        solver: &SolverConfig,
        pcfg: &ProjectionConfig,
        row: &mut BenchRow,
    ) -> Result<SolveResult> {
        let sigma_hat = model.dense_covariance();
        row.rel_spectral_error = Some(relative_spectral_error(&sigma_hat, &self.sigma)?);
        row.conditioning = Some(conditioning_report(model));
        row.params.gamma = model.gamma;
        row.params.ell = model.provenance.ell.or(row.params.ell);
        let t0 = Instant::now();
        let res = solve(model, &self.feasible, None, solver, pcfg)?;
        row.timing.solve_time = t0.elapsed().as_secs_f64();
        self.record_solution(model, &sigma_hat, &res, row)?;
        Ok(res)
    }

    fn record_solution(
        &self,
        model: &FactorModel,
        sigma_hat: &DMatrix<f64>,
        res: &SolveResult,
        row: &mut BenchRow,
    ) -> Result<()> {
        let x = res.weights();
        row.iterations = Some(res.iterations);
        row.objective = Some(res.objective);
        let full = x.dot(&(&self.sigma * &x));
        row.full_model_gap = Some(objective_gap(full, self.reference.value));
        if model.n_assets() <= MAX_ORACLE_DIM {
            let exact = solve_exact(&QpInstance::mean_variance(
                sigma_hat,
                self.feasible.clone(),
            )?)?;
            row.model_gap = Some(objective_gap(res.objective, exact.value));
        }
        Ok(())
    }
}

fn sketch_size(ratio: f64, ell: usize, t: usize) -> usize {
    ((ratio * ell as f64).ceil() as usize).clamp(1, t)
}

fn kind_index(kind: SketchKind) -> u64 {
    match kind {
        SketchKind::GaussianJl => 1,
        SketchKind::Countsketch => 2,
    }
}

fn sketch_seed(base: u64, kind: SketchKind, rep: usize, point: usize) -> u64 {
    derive_seed(
        base,
        TAG_SKETCH ^ (kind_index(kind) << 32) ^ point as u64,
        rep as u64,
    )
}

fn synthetic_spec(cfg: &ExperimentConfig) -> Result<&SyntheticSpec> {
    match &cfg.instance {
        InstanceConfig::Synthetic(spec) => Ok(spec),
        InstanceConfig::Panel { .. } => Err(Error::Config(
            "this experiment needs a synthetic instance".into(),
        )),
    }
}

/// Ridge policies of the sweep with their `γ/‖Σ‖₂` labels.
fn ridge_points(cfg: &ExperimentConfig, sigma_norm: f64) -> Vec<(RidgePolicy, Option<f64>)> {
    if cfg.sweep.gamma_fractions.is_empty() {
        vec![(cfg.sweep.ridge, None)]
    } else {
        cfg.sweep
            .gamma_fractions
            .iter()
            .map(|&f| {
                (
                    RidgePolicy::Explicit {
                        gamma: f * sigma_norm,
                    },
                    Some(f),
                )
            })
            .collect()
    }
}

/// Level selection points: one per `η`, or the truncation rule alone.
fn level_points(
    cfg: &ExperimentConfig,
    inst: &Instance,
) -> Result<Vec<(Option<f64>, usize, TruncationLevel)>> {
    if cfg.sweep.etas.is_empty() {
        let ell =
            select_truncation_level_from_eigenvalues(&inst.eigenvalues, &cfg.sweep.truncation)?;
        return Ok(vec![(
            None,
            ell,
            TruncationLevel::Rule(cfg.sweep.truncation),
        )]);
    }
    cfg.sweep
        .etas
        .iter()
        .map(|&eta| {
            let ell = inst.ell_for_energy(eta)?;
            Ok((Some(eta), ell, TruncationLevel::Fixed { ell }))
        })
        .collect()
}

fn finish_row(row: BenchRow, outcome: Result<()>) -> BenchRow {
    match outcome {
        Ok(()) => row,
        Err(e) => row.failed(&e),
    }
}

fn approximation_rows(cfg: &ExperimentConfig, spec: &SyntheticSpec, rep: usize) -> Vec<BenchRow> {
    let inst = match Instance::synthetic(spec, cfg, TAG_INSTANCE, rep) {
        Ok(inst) => inst,
        Err(e) => {
            let params = RowParams {
                n: spec.n,
                t: spec.t,
                ..Default::default()
            };
            return vec![
                BenchRow::new(ModelKind::Str, rep, params, RowSeeds::default()).failed(&e),
            ];
        }
    };
    let points = match level_points(cfg, &inst) {
        Ok(p) => p,
        Err(e) => {
            let params = RowParams {
                n: inst.n(),
                t: inst.t(),
                ..Default::default()
            };
            return vec![BenchRow::new(ModelKind::Str, rep, params, inst.seeds.clone()).failed(&e)];
        }
    };
    let sigma_norm = inst.eigenvalues.first().copied().unwrap_or(0.0);
    let ridges = ridge_points(cfg, sigma_norm);
    let mut rows = Vec::new();
    let wants = |m: ModelKind| cfg.sweep.models.contains(&m);
    if wants(ModelKind::Baseline) {
        let params = RowParams {
            n: inst.n(),
            t: inst.t(),
            ..Default::default()
        };
        let mut row = BenchRow::new(ModelKind::Baseline, rep, params, inst.seeds.clone());
        let outcome = (|| {
            let t0 = Instant::now();
            let model = build_baseline(&inst.factor);
            row.timing.build_time = t0.elapsed().as_secs_f64();
            inst.evaluate(&model, &cfg.solver, &cfg.projection, &mut row)?;
            row.timing.total_time = row.timing.build_time + row.timing.solve_time;
            Ok(())
        })();
        rows.push(finish_row(row, outcome));
    }
    for &kind in &cfg.sweep.sketch_kinds {
        for (ri, &ratio) in cfg.sweep.s_over_ell.iter().enumerate() {
            for (pi, &(eta, ell, level)) in points.iter().enumerate() {
                let s = sketch_size(ratio, ell, inst.t());
                let seed = sketch_seed(cfg.seed, kind, rep, ri * points.len() + pi);
                let params = RowParams {
                    n: inst.n(),
                    t: inst.t(),
                    sketch_kind: Some(kind),
                    s: Some(s),
                    ell: Some(ell),
                    eta,
                    s_over_ell: Some(ratio),
                    gamma: 0.0,
                    gamma_fraction: None,
                };
                let seeds = RowSeeds {
                    sketch: Some(seed),
                    ..inst.seeds.clone()
                };
                let sk_cfg = SketchConfig::new(kind, s, seed);
                let t0 = Instant::now();
                let sketched = sk_cfg
                    .operator(inst.t())
                    .and_then(|op| op.apply(&inst.factor.factor));
                let sketch_time = t0.elapsed().as_secs_f64();

                let lt = match &sketched {
                    Ok(lt) => lt,
                    Err(e) => {
                        if wants(ModelKind::Sketch) {
                            rows.push(
                                BenchRow::new(
                                    ModelKind::Sketch,
                                    rep,
                                    params.clone(),
                                    seeds.clone(),
                                )
                                .failed(e),
                            );
                        }
                        for &(_, fraction) in ridges.iter().filter(|_| wants(ModelKind::Str)) {
                            let params = RowParams {
                                gamma_fraction: fraction,
                                ..params.clone()
                            };
                            rows.push(
                                BenchRow::new(ModelKind::Str, rep, params, seeds.clone()).failed(e),
                            );
                        }
                        continue;
                    }
                };
                if wants(ModelKind::Sketch) {
                    let mut row =
                        BenchRow::new(ModelKind::Sketch, rep, params.clone(), seeds.clone());
                    let outcome = (|| {
                        let model = FactorModel {
                            factor: lt.clone(),
                            gamma: 0.0,
                            kind: ModelKind::Sketch,
                            provenance: crate::model::Provenance {
                                sketch: Some(sk_cfg),
                                ..Default::default()
                            },
                        };
                        row.timing.build_time = sketch_time;
                        inst.evaluate(&model, &cfg.solver, &cfg.projection, &mut row)?;
                        row.timing.total_time = row.timing.build_time + row.timing.solve_time;
                        Ok(())
                    })();
                    rows.push(finish_row(row, outcome));
                }

                for &(ridge, fraction) in ridges.iter().filter(|_| wants(ModelKind::Str)) {
                    let mut row = BenchRow::new(
                        ModelKind::Str,
                        rep,
                        RowParams {
                            gamma_fraction: fraction,
                            ..params.clone()
                        },
                        seeds.clone(),
                    );
                    let outcome = (|| {
                        let t1 = Instant::now();
                        let model = str_from_sketched(lt, Some(sk_cfg), level, &ridge)?;
                        row.timing.build_time = sketch_time + t1.elapsed().as_secs_f64();
                        inst.evaluate(&model, &cfg.solver, &cfg.projection, &mut row)?;
                        row.timing.total_time = row.timing.build_time + row.timing.solve_time;
                        Ok(())
                    })();
                    rows.push(finish_row(row, outcome));
                }
            }
        }
    }
    rows
}

fn instance_ledger(report: &mut BenchReport, rows: &[BenchRow]) {
    let mut seen = std::collections::BTreeSet::new();
    for r in rows {
        if seen.insert((r.repetition, r.seeds.instance)) {
            report.seed_ledger.push(SeedRecord {
                stream: "instance".into(),
                repetition: r.repetition,
                seed: r.seeds.instance,
            });
            if let Some(mu) = r.seeds.mu {
                report.seed_ledger.push(SeedRecord {
                    stream: "mu".into(),
                    repetition: r.repetition,
                    seed: mu,
                });
            }
        }
        if let Some(s) = r.seeds.sketch {
            if seen.insert((r.repetition, s)) {
                report.seed_ledger.push(SeedRecord {
                    stream: format!(
                        "sketch:{}",
                        r.params.sketch_kind.map(|k| k.label()).unwrap_or("none")
                    ),
                    repetition: r.repetition,
                    seed: s,
                });
            }
        }
    }
}

fn base_metadata(report: &mut BenchReport, cfg: &ExperimentConfig) {
    report
        .metadata
        .insert("repetitions".into(), json!(cfg.repetitions));
    report.metadata.insert("warmup".into(), json!(cfg.warmup));
    report
        .metadata
        .insert("reference_tol".into(), json!(cfg.reference_tol));
    report.metadata.insert("solver".into(), json!(cfg.solver));
    report
        .metadata
        .insert("projection".into(), json!(cfg.projection));
}

/// Sketch and STR rows for every sketch kind, `s/ℓ` ratio, level point and
/// ridge point, repeated over independent synthetic instances.
pub fn run_approximation_sweep(cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let spec = synthetic_spec(cfg)?;
    let rows: Vec<Vec<BenchRow>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| approximation_rows(cfg, spec, rep))
        .collect();
    let mut report = BenchReport::new("approx", cfg.seed);
    base_metadata(&mut report, cfg);
    report.metadata.insert("instance".into(), json!(spec));
    report.metadata.insert("sweep".into(), json!(cfg.sweep));
    report.metadata.insert("returns".into(), json!(cfg.returns));
    report.rows = rows.into_iter().flatten().collect();
    let rows = report.rows.clone();
    instance_ledger(&mut report, &rows);
    report.summarize();
    Ok(report)
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Gaps below this are indistinguishable from rounding in `f`.
pub fn gap_noise_floor(f_star: f64) -> f64 {
    1e-13 * f_star.abs().max(1.0)
}

fn write_trace_csv(path: &Path, objective: &[f64], f_star: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["iteration", "objective", "gap"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for (k, f) in objective.iter().enumerate() {
        w.write_record([k.to_string(), format!("{f:e}"), format!("{:e}", f - f_star)])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct RateCase {
    model: FactorModel,
    momentum: MomentumMode,
    label: &'static str,
}

fn rate_rows(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<BenchRow>> {
    let rc = &cfg.rate;
    let shape = match &cfg.instance {
        InstanceConfig::Synthetic(spec) => spec.clone(),
        InstanceConfig::Panel { .. } => SyntheticSpec::default(),
    };
    let spec = SyntheticSpec {
        n: rc.n,
        t: rc.t,
        ..shape
    };
    let inst = Instance::synthetic(&spec, cfg, TAG_RATE, rep)?;
    let seed = sketch_seed(cfg.seed, SketchKind::GaussianJl, rep, 0);
    let s = rc.sketch_size.clamp(1, inst.t());
    let op = SketchConfig::new(SketchKind::GaussianJl, s, seed).operator(inst.t())?;
    let convex = build_sketch_with(&inst.factor, &op)?;
    let lt = op.apply(&inst.factor.factor)?;
    let strongly = str_from_sketched(
        &lt,
        Some(SketchConfig::new(SketchKind::GaussianJl, s, seed)),
        TruncationLevel::Fixed { ell: rc.str_ell },
        &RidgePolicy::TargetKappa {
            kappa_target: rc.kappa_target,
        },
    )?;
    let cases = [
        RateCase {
            model: convex,
            momentum: MomentumMode::Fista,
            label: "convex",
        },
        RateCase {
            model: strongly,
            momentum: MomentumMode::StronglyConvex,
            label: "strongly_convex",
        },
    ];

    let mut rows = Vec::new();
    for case in cases {
        let model = &case.model;
        let sigma_hat = model.dense_covariance();
        let exact = solve_exact(&QpInstance::mean_variance(
            &sigma_hat,
            inst.feasible.clone(),
        )?)?;
        let sigma1 = thin_svd(&model.factor, DEFAULT_RANK_TOL)?
            .singular_values
            .first()
            .copied()
            .unwrap_or(0.0);
        let l_f = 2.0 * (sigma1 * sigma1 + model.gamma);
        let alpha = 1.0 / l_f;
        let solver = SolverConfig {
            step_mode: StepMode::FixedExplicit { alpha },
            momentum_mode: case.momentum,
            tol: f64::MIN_POSITIVE,
            max_iters: rc.iterations,
            trace_objective: true,
            residual_check_stride: 1,
            sigma_min_hint: None,
            ..cfg.solver.clone()
        };
        let res = solve(model, &inst.feasible, None, &solver, &cfg.projection)?;
        let f_star = exact.value;
        let floor = gap_noise_floor(f_star);
        let gaps: Vec<f64> = res.objective_trace.iter().map(|f| f - f_star).collect();
        let window: Vec<(f64, f64)> = gaps
            .iter()
            .enumerate()
            .filter(|(k, g)| *k >= rc.fit_start.max(1) && *k <= rc.fit_end && **g > floor)
            .map(|(k, g)| (k as f64, g.ln()))
            .collect();

        let mut row = BenchRow::new(
            model.kind,
            rep,
            RowParams {
                n: inst.n(),
                t: inst.t(),
                sketch_kind: Some(SketchKind::GaussianJl),
                s: Some(s),
                ell: model.provenance.ell,
                gamma: model.gamma,
                ..Default::default()
            },
            RowSeeds {
                sketch: Some(seed),
                ..inst.seeds.clone()
            },
        );
        row.iterations = Some(res.iterations);
        row.objective = Some(res.objective);
        row.model_gap = Some(objective_gap(res.objective, f_star));
        let full = res.weights().dot(&(&inst.sigma * res.weights()));
        row.full_model_gap = Some(objective_gap(full, inst.reference.value));
        row.conditioning = Some(conditioning_report(model));
        row.timing.solve_time = res.wall_time;
        row.timing.total_time = res.wall_time;
        row.extra.insert("alpha".into(), alpha);
        row.extra.insert("f_star".into(), f_star);
        row.extra.insert("fit_points".into(), window.len() as f64);
        let xs: Vec<f64>;
        let ys: Vec<f64> = window.iter().map(|p| p.1).collect();
        match case.momentum {
            MomentumMode::Fista => {
                xs = window.iter().map(|p| p.0.ln()).collect();
                if let Some((slope, _)) = fit_line(&xs, &ys) {
                    row.extra.insert("loglog_slope".into(), slope);
                }
            }
            MomentumMode::StronglyConvex => {
                xs = window.iter().map(|p| p.0).collect();
                let theory = 1.0 - (alpha * res.m_f).min(1.0).sqrt();
                row.extra.insert("theory_ratio".into(), theory);
                if let Some((slope, _)) = fit_line(&xs, &ys) {
                    row.extra.insert("gap_ratio".into(), slope.exp());
                }
            }
        }
        if let Some(dir) = &cfg.csv_dir {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.clone(),
                source,
            })?;
            write_trace_csv(
                &dir.join(format!("rate_{}_rep{rep}.csv", case.label)),
                &res.objective_trace,
                f_star,
            )?;
            res.write_residual_csv(
                &dir.join(format!("rate_{}_rep{rep}_residual.csv", case.label)),
                1,
            )?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Objective-gap traces against the oracle optimum on a rank-deficient
/// sketch model (`γ = 0`, FISTA momentum) and an STR model (`γ > 0`,
/// constant momentum), with fitted rates in each row's `extra`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let rc = &cfg.rate;
    if rc.n > MAX_ORACLE_DIM {
        return Err(Error::Config(format!(
            "rate experiment needs n <= {MAX_ORACLE_DIM}"
        )));
    }
    if rc.fit_start >= rc.fit_end || rc.iterations == 0 {
        return Err(Error::Config("rate fit window is empty".into()));
    }
    let per_rep: Vec<Vec<BenchRow>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            rate_rows(cfg, rep).unwrap_or_else(|e| {
                let params = RowParams {
                    n: rc.n,
                    t: rc.t,
                    ..Default::default()
                };
                vec![BenchRow::new(ModelKind::Sketch, rep, params, RowSeeds::default()).failed(&e)]
            })
        })
        .collect();
    let mut report = BenchReport::new("rate", cfg.seed);
    base_metadata(&mut report, cfg);
    report.metadata.insert("rate".into(), json!(rc));
    report.rows = per_rep.into_iter().flatten().collect();
    let rows = report.rows.clone();
    instance_ledger(&mut report, &rows);
    report.summarize();
    Ok(report)
}

/// Builds a model, solving it `warmup + repetitions` times, and records the
/// median build and solve times of the timed runs.
fn timed_row<F>(
    inst: &Instance,
    build: F,
    cfg: &ExperimentConfig,
    solver: &SolverConfig,
    pcfg: &ProjectionConfig,
    mut row: BenchRow,
) -> BenchRow
where
    F: Fn() -> Result<FactorModel>,
{
    let outcome = (|| {
        let mut builds = Vec::new();
        let mut solves = Vec::new();
        let mut last = None;
        for run in 0..cfg.warmup + cfg.repetitions {
            let t0 = Instant::now();
            let model = build()?;
            let bt = t0.elapsed().as_secs_f64();
            let res = solve(&model, &inst.feasible, None, solver, pcfg)?;
            if run >= cfg.warmup {
                builds.push(bt);
                solves.push(res.wall_time);
            }
            last = Some((model, res));
        }
        let (model, res) = last.expect("at least one timed run");
        row.params.gamma = model.gamma;
        row.params.ell = model.provenance.ell.or(row.params.ell);
        row.conditioning = Some(conditioning_report(&model));
        if inst.n() <= crate::metrics::DENSE_NORM_LIMIT {
            row.rel_spectral_error = Some(relative_spectral_error(
                &model.dense_covariance(),
                &inst.sigma,
            )?);
        }
        let sigma_hat = if model.n_assets() <= MAX_ORACLE_DIM {
            model.dense_covariance()
        } else {
            DMatrix::zeros(0, 0)
        };
        inst.record_solution(&model, &sigma_hat, &res, &mut row)?;
        row.timing.build_time = median(&builds);
        row.timing.solve_time = median(&solves);
        row.timing.total_time = row.timing.build_time + row.timing.solve_time;
        Ok(())
    })();
    finish_row(row, outcome)
}

fn solver_rows(cfg: &ExperimentConfig, n: usize) -> Result<Vec<BenchRow>> {
    let sb = &cfg.solver_bench;
    let shape = match &cfg.instance {
        InstanceConfig::Synthetic(spec) => spec.clone(),
        InstanceConfig::Panel { .. } => SyntheticSpec::default(),
    };
    let spec = SyntheticSpec {
        n,
        t: sb.periods_per_asset * n,
        ..shape
    };
    let inst = Instance::synthetic(&spec, cfg, TAG_SOLVER, n)?;
    let ell = inst.ell_for_energy(sb.eta)?;
    let s = sketch_size(sb.s_over_ell, ell, inst.t());
    let seed = sketch_seed(cfg.seed, sb.sketch_kind, n, 0);
    let sk_cfg = SketchConfig::new(sb.sketch_kind, s, seed);
    let solver = SolverConfig {
        residual_check_stride: TIMING_RESIDUAL_STRIDE,
        ..cfg.solver.clone()
    };
    let pcfg = ProjectionConfig {
        tol_scalar: TIMING_PROJECTION_TOL,
        ..cfg.projection
    };
    let base_params = RowParams {
        n,
        t: inst.t(),
        ..Default::default()
    };
    let sketch_params = RowParams {
        sketch_kind: Some(sb.sketch_kind),
        s: Some(s),
        ell: Some(ell),
        eta: Some(sb.eta),
        s_over_ell: Some(sb.s_over_ell),
        ..base_params.clone()
    };
    let sketch_seeds = RowSeeds {
        sketch: Some(seed),
        ..inst.seeds.clone()
    };
    let ridge = cfg.sweep.ridge;
    let rows = vec![
        timed_row(
            &inst,
            || Ok(build_baseline(&inst.factor)),
            cfg,
            &solver,
            &pcfg,
            BenchRow::new(ModelKind::Baseline, 0, base_params, inst.seeds.clone()),
        ),
        timed_row(
            &inst,
            || crate::model::build_sketch(&inst.factor, &sk_cfg),
            cfg,
            &solver,
            &pcfg,
            BenchRow::new(
                ModelKind::Sketch,
                0,
                sketch_params.clone(),
                sketch_seeds.clone(),
            ),
        ),
        timed_row(
            &inst,
            || {
                crate::model::build_str_with_level(
                    &inst.factor,
                    &sk_cfg,
                    TruncationLevel::Fixed { ell },
                    &ridge,
                )
            },
            cfg,
            &solver,
            &pcfg,
            BenchRow::new(ModelKind::Str, 0, sketch_params, sketch_seeds),
        ),
    ];
    Ok(rows)
}

/// Repeated-median build and solve times for baseline, sketch and STR models
/// at each configured size, with same-model gaps where the oracle applies.
pub fn run_solver_benchmark(cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut report = BenchReport::new("solver", cfg.seed);
    base_metadata(&mut report, cfg);
    report
        .metadata
        .insert("solver_bench".into(), json!(cfg.solver_bench));
    report.metadata.insert(
        "residual_check_stride".into(),
        json!(TIMING_RESIDUAL_STRIDE),
    );
    report
        .metadata
        .insert("projection_tol".into(), json!(TIMING_PROJECTION_TOL));
    for &n in &cfg.solver_bench.sizes {
        let rows = solver_rows(cfg, n).unwrap_or_else(|e| {
            let params = RowParams {
                n,
                t: cfg.solver_bench.periods_per_asset * n,
                ..Default::default()
            };
            vec![BenchRow::new(ModelKind::Baseline, 0, params, RowSeeds::default()).failed(&e)]
        });
        report.rows.extend(rows);
    }
    let rows = report.rows.clone();
    instance_ledger(&mut report, &rows);
    report.summarize();
    Ok(report)
}

fn load_instance_panel(cfg: &ExperimentConfig) -> Result<(ReturnPanel, u64)> {
    match &cfg.instance {
        InstanceConfig::Panel {
            path,
            delimiter,
            has_header,
        } => {
            let delimiter = u8::try_from(*delimiter as u32)
                .map_err(|_| Error::Config("delimiter must be a single-byte character".into()))?;
            let format = CsvFormat {
                delimiter,
                has_header: *has_header,
            };
            Ok((load_panel(path, format)?, 0))
        }
        InstanceConfig::Synthetic(spec) => {
            let seed = derive_seed(cfg.seed, TAG_INSTANCE ^ spec.seed, 0);
            let panel = generate_synthetic(&SyntheticSpec {
                seed,
                ..spec.clone()
            })?;
            Ok((panel, seed))
        }
    }
}

/// Trains on the first segment of the panel with `μ` the in-sample means,
/// then evaluates the fixed weights on the remaining periods.
pub fn run_real_panel(cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let rc = &cfg.real;
    let (panel, instance_seed) = load_instance_panel(cfg)?;
    let t = panel.n_periods();
    let split = rc
        .split_index
        .unwrap_or_else(|| (rc.train_fraction * t as f64).round() as usize);
    let (train, test) = panel.split_at(split)?;
    let mu = train.mean_returns();
    let seeds = RowSeeds {
        instance: instance_seed,
        sketch: None,
        mu: None,
        solver: cfg.solver.seed,
    };
    let inst = Instance::from_panel(train, mu, cfg.returns.target_quantile, cfg, seeds)?;

    let mut report = BenchReport::new("real", cfg.seed);
    base_metadata(&mut report, cfg);
    report
        .metadata
        .insert("r_target".into(), json!(inst.feasible.r_target));
    report
        .metadata
        .insert("target_quantile".into(), json!(cfg.returns.target_quantile));
    report.metadata.insert("split_index".into(), json!(split));
    report
        .metadata
        .insert("train_periods".into(), json!(inst.t()));
    report
        .metadata
        .insert("test_periods".into(), json!(test.n_periods()));
    report.metadata.insert("n_assets".into(), json!(inst.n()));
    report.metadata.insert("real".into(), json!(rc));

    let base_params = RowParams {
        n: inst.n(),
        t: inst.t(),
        ..Default::default()
    };
    let seed = sketch_seed(cfg.seed, rc.sketch_kind, 0, 0);
    let ell = inst.ell_for_energy(rc.eta);
    let eval = |model: Result<FactorModel>, mut row: BenchRow| -> BenchRow {
        let outcome = (|| {
            let t0 = Instant::now();
            let model = model?;
            row.timing.build_time = t0.elapsed().as_secs_f64();
            let res = inst.evaluate(&model, &cfg.solver, &cfg.projection, &mut row)?;
            row.timing.total_time = row.timing.build_time + row.timing.solve_time;
            let oos = portfolio_returns(&res.weights(), test.returns())?;
            row.portfolio_stats = Some(annualize_with(&oos, rc.compounding)?);
            let ins = portfolio_returns(&res.weights(), inst.panel.returns())?;
            let stats = annualize_with(&ins, rc.compounding)?;
            row.extra
                .insert("in_sample_return".into(), stats.annualized_return);
            row.extra
                .insert("in_sample_vol".into(), stats.annualized_vol);
            Ok(())
        })();
        finish_row(row, outcome)
    };

    report.rows.push(eval(
        Ok(build_baseline(&inst.factor)),
        BenchRow::new(
            ModelKind::Baseline,
            0,
            base_params.clone(),
            inst.seeds.clone(),
        ),
    ));
    let sketch_seeds = RowSeeds {
        sketch: Some(seed),
        ..inst.seeds.clone()
    };
    match ell {
        Ok(ell) => {
            let s = sketch_size(rc.s_over_ell, ell, inst.t());
            let sk_params = RowParams {
                sketch_kind: Some(rc.sketch_kind),
                s: Some(s),
                ell: Some(ell),
                eta: Some(rc.eta),
                s_over_ell: Some(rc.s_over_ell),
                ..base_params.clone()
            };
            let sk_cfg = SketchConfig::new(rc.sketch_kind, s, seed);
            let sketched = sk_cfg
                .operator(inst.t())
                .and_then(|op| op.apply(&inst.factor.factor));
            match &sketched {
                Ok(lt) => {
                    let sketch_model = Ok(FactorModel {
                        factor: lt.clone(),
                        gamma: 0.0,
                        kind: ModelKind::Sketch,
                        provenance: crate::model::Provenance {
                            sketch: Some(sk_cfg),
                            ..Default::default()
                        },
                    });
                    report.rows.push(eval(
                        sketch_model,
                        BenchRow::new(
                            ModelKind::Sketch,
                            0,
                            sk_params.clone(),
                            sketch_seeds.clone(),
                        ),
                    ));
                    let str_model = str_from_sketched(
                        lt,
                        Some(sk_cfg),
                        TruncationLevel::Fixed { ell },
                        &cfg.sweep.ridge,
                    );
                    report.rows.push(eval(
                        str_model,
                        BenchRow::new(ModelKind::Str, 0, sk_params, sketch_seeds),
                    ));
                }
                Err(e) => {
                    for kind in [ModelKind::Sketch, ModelKind::Str] {
                        report.rows.push(
                            BenchRow::new(kind, 0, sk_params.clone(), sketch_seeds.clone())
                                .failed(e),
                        );
                    }
                }
            }
        }
        Err(e) => {
            for kind in [ModelKind::Sketch, ModelKind::Str] {
                report.rows.push(
                    BenchRow::new(kind, 0, base_params.clone(), sketch_seeds.clone()).failed(&e),
                );
            }
        }
    }
    let rows = report.rows.clone();
    instance_ledger(&mut report, &rows);
    report.summarize();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceConfig::Synthetic(SyntheticSpec {
                n: 8,
                t: 40,
                ..SyntheticSpec::default()
            }),
            repetitions: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn fit_line_recovers_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let (m, b) = fit_line(&x, &y).unwrap();
        assert!((m + 2.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12);
        assert!(fit_line(&[1.0], &[1.0]).is_none());
        assert!(fit_line(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn sweep_rows_cover_grid() {
        let rep = run_approximation_sweep(&small_cfg()).unwrap();
        // 2 reps x 2 kinds x (sketch + str)
        assert_eq!(rep.rows.len(), 8);
        assert!(rep.rows.iter().all(|r| r.error.is_none()), "{:?}", rep.rows);
        for r in &rep.rows {
            assert!(r.full_model_gap.unwrap() >= 0.0);
            assert!(r.model_gap.unwrap() <= 1e-6);
        }
        assert_eq!(rep.summary.len(), 4);
    }

    #[test]
    fn sweep_needs_synthetic_instance() {
        let cfg = ExperimentConfig {
            instance: InstanceConfig::Panel {
                path: "missing.csv".into(),
                delimiter: ',',
                has_header: true,
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(
            run_approximation_sweep(&cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn real_panel_rows_and_target() {
        let mut cfg = small_cfg();
        cfg.repetitions = 1;
        let rep = run_real_panel(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for r in &rep.rows {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(r.full_model_gap.unwrap() >= 0.0);
            assert!(r.portfolio_stats.is_some());
        }
        let target = rep.metadata["r_target"].as_f64().unwrap();
        assert!(target.is_finite());
    }

    #[test]
    fn real_panel_with_short_test_segment_records_error() {
        let mut cfg = small_cfg();
        cfg.real.split_index = Some(39);
        let rep = run_real_panel(&cfg).unwrap();
        assert!(rep.rows.iter().all(|r| r
            .error
            .as_deref()
            .unwrap_or("")
            .contains("undefined metric")));
    }

    #[test]
    fn solver_benchmark_small() {
        let mut cfg = small_cfg();
        cfg.solver_bench.sizes = vec![10];
        cfg.repetitions = 1;
        let rep = run_solver_benchmark(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for r in &rep.rows {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(r.model_gap.unwrap() <= 1e-8, "{:?}", r.model_gap);
        }
    }
}

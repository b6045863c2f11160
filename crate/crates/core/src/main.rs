use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use mvstr::bench::{
    return_target, run_approximation_sweep, run_rate_experiment, run_real_panel,
    run_solver_benchmark, BenchReport, ExperimentConfig, InstanceConfig,
};
use mvstr::linalg::derive_seed;
use mvstr::metrics::conditioning_report;
use mvstr::model::{build_baseline, build_sketch, build_str_with_level, TruncationLevel};
use mvstr::panel::{center_and_factor, generate_synthetic, load_panel, CsvFormat};
use mvstr::projection::project_feasible;
use mvstr::spectrum::{cumulative_energy, energy_rank, DEFAULT_RANK_TOL};
use mvstr::{
    Error, FeasibleSet, ModelKind, Result, ReturnPanel, RidgePolicy, SketchConfig, SketchKind,
    SpectrumReport, SyntheticSpec,
};

#[derive(Parser, Debug)]
#[command(
    name = "mvstr",
    version,
    about = "Sketch-truncate-ridge covariance models and an accelerated projected gradient solver for long-only mean-variance portfolios"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Solver residual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic return panel as CSV.
    Synth(SynthArgs),
    /// Spectrum of the centered covariance factor as JSON.
    Spectrum(PanelArgs),
    /// Project a point onto the feasible set and print diagnostics.
    Project(ProjectArgs),
    /// Build one model and solve it.
    Solve(SolveArgs),
    /// Run an experiment and write its report.
    Bench {
        #[command(subcommand)]
        experiment: BenchCommand,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum BenchCommand {
    Approx,
    Rate,
    Solver,
    Real,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Args, Debug)]
struct PanelArgs {
    /// Return panel CSV; the configured instance is used when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    /// Point to project, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    v: Vec<f64>,
    /// Expected returns, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Vec<f64>,
    /// CSV with columns `v,mu` (header required), instead of --v and --mu.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    target: f64,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long, default_value = "str")]
    model: ModelKind,
    #[arg(long, default_value = "countsketch")]
    sketch_kind: SketchKind,
    /// Sketch width; defaults to `s_over_ell · ℓ`.
    #[arg(long)]
    sketch_size: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    s_over_ell: f64,
    /// Retained rank; defaults to the energy rank at --eta.
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long, default_value_t = 0.98)]
    eta: f64,
    #[arg(long)]
    kappa_target: Option<f64>,
    /// Explicit ridge, overriding the configured policy.
    #[arg(long)]
    gamma: Option<f64>,
    /// Quantile of the mean returns used as the return target.
    #[arg(long)]
    quantile: Option<f64>,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.solver.tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn csv_format(delimiter: char, has_header: bool) -> Result<CsvFormat> {
    let delimiter = u8::try_from(delimiter as u32)
        .map_err(|_| Error::Argument("delimiter must be a single-byte character".into()))?;
    Ok(CsvFormat {
        delimiter,
        has_header,
    })
}

fn input_panel(args: &PanelArgs, cfg: &ExperimentConfig) -> Result<ReturnPanel> {
    if let Some(path) = &args.input {
        return load_panel(path, csv_format(args.delimiter, !args.no_header)?);
    }
    match &cfg.instance {
        InstanceConfig::Panel {
            path,
            delimiter,
            has_header,
        } => load_panel(path, csv_format(*delimiter, *has_header)?),
        InstanceConfig::Synthetic(spec) => generate_synthetic(&SyntheticSpec {
            seed: derive_seed(cfg.seed, spec.seed, 0),
            ..spec.clone()
        }),
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs, cfg: &ExperimentConfig) -> Result<()> {
    let base = match &cfg.instance {
        InstanceConfig::Synthetic(spec) => spec.clone(),
        InstanceConfig::Panel { .. } => SyntheticSpec::default(),
    };
    let spec = SyntheticSpec {
        n: args.n.unwrap_or(base.n),
        t: args.t.unwrap_or(base.t),
        singular_decay: args.decay.unwrap_or(base.singular_decay),
        leading_scale: args.scale.unwrap_or(base.leading_scale),
        noise_floor: args.floor.unwrap_or(base.noise_floor),
        seed: cli.seed.unwrap_or(base.seed),
    };
    let panel = generate_synthetic(&spec)?;
    match &cli.out {
        Some(path) => panel.write_csv(path),
        None => panel.write_csv_to(std::io::stdout().lock(), Path::new("<stdout>")),
    }
}

fn cmd_spectrum(cli: &Cli, args: &PanelArgs, cfg: &ExperimentConfig) -> Result<()> {
    let factor = center_and_factor(&input_panel(args, cfg)?)?;
    let report = if factor.n_columns() > factor.n_assets() {
        SpectrumReport::of_factor_via_gram(&factor.factor, DEFAULT_RANK_TOL)?
    } else {
        SpectrumReport::of_matrix(&factor.factor, DEFAULT_RANK_TOL)?
    };
    emit(cli.out.as_deref(), &to_json(&report)?)
}

fn read_project_input(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let (mut v, mut mu) = (Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!(
                "row {} must have two columns",
                row + 1
            )));
        }
        let parse = |column: usize| {
            rec[column].trim().parse::<f64>().map_err(|e| Error::Parse {
                row: row + 1,
                column: column + 1,
                message: e.to_string(),
            })
        };
        v.push(parse(0)?);
        mu.push(parse(1)?);
    }
    Ok((v, mu))
}

fn cmd_project(cli: &Cli, args: &ProjectArgs, cfg: &ExperimentConfig) -> Result<()> {
    let (v, mu) = match &args.input {
        Some(path) => read_project_input(path)?,
        None => (args.v.clone(), args.mu.clone()),
    };
    if v.len() != mu.len() {
        return Err(Error::Dimension(format!(
            "v has {} entries, mu has {}",
            v.len(),
            mu.len()
        )));
    }
    let set = FeasibleSet::new(DVector::from_vec(mu), args.target)?;
    let (x, diagnostics) = project_feasible(&DVector::from_vec(v), &set, &cfg.projection)?;
    let out = json!({
        "x": x.as_slice(),
        "nu": diagnostics.nu,
        "diagnostics": diagnostics,
    });
    emit(cli.out.as_deref(), &to_json(&out)?)
}

fn cmd_solve(cli: &Cli, args: &SolveArgs, cfg: &ExperimentConfig) -> Result<()> {
    let panel = input_panel(&args.panel, cfg)?;
    let factor = center_and_factor(&panel)?;
    let quantile = args.quantile.unwrap_or(cfg.returns.target_quantile);
    let mu = panel.mean_returns();
    let r_target = return_target(&mu, quantile);
    let set = FeasibleSet::new(mu, r_target)?;

    let ell = match args.ell {
        Some(ell) => ell,
        None if args.model == ModelKind::Baseline => 0,
        None => {
            let eigs = mvstr::linalg::sym_eigenvalues_desc(&factor.covariance());
            let (energy, degenerate) = cumulative_energy(&eigs);
            if degenerate {
                return Err(Error::DegenerateSpectrum(
                    "covariance has zero energy".into(),
                ));
            }
            energy_rank(&energy, args.eta)?
        }
    };
    let size = args.sketch_size.unwrap_or_else(|| {
        ((args.s_over_ell * ell as f64).ceil() as usize).clamp(1, factor.n_columns())
    });
    let sketch_cfg = SketchConfig::new(args.sketch_kind, size, derive_seed(cfg.seed, 0x5c37, 0));
    let ridge = match (args.gamma, args.kappa_target) {
        (Some(gamma), _) => RidgePolicy::Explicit { gamma },
        (None, Some(kappa_target)) => RidgePolicy::TargetKappa { kappa_target },
        (None, None) => cfg.sweep.ridge,
    };
    let model = match args.model {
        ModelKind::Baseline => build_baseline(&factor),
        ModelKind::Sketch => build_sketch(&factor, &sketch_cfg)?,
        ModelKind::Str => {
            build_str_with_level(&factor, &sketch_cfg, TruncationLevel::Fixed { ell }, &ridge)?
        }
    };
    let result = mvstr::solver::solve(&model, &set, None, &cfg.solver, &cfg.projection)?;
    let out = json!({
        "model": model.kind,
        "n": model.n_assets(),
        "columns": model.n_columns(),
        "gamma": model.gamma,
        "provenance": model.provenance,
        "r_target": r_target,
        "conditioning": conditioning_report(&model),
        "result": result,
    });
    emit(cli.out.as_deref(), &to_json(&out)?)
}

fn cmd_bench(cli: &Cli, which: BenchCommand, cfg: &ExperimentConfig) -> Result<()> {
    let report: BenchReport = match which {
        BenchCommand::Approx => run_approximation_sweep(cfg)?,
        BenchCommand::Rate => run_rate_experiment(cfg)?,
        BenchCommand::Solver => run_solver_benchmark(cfg)?,
        BenchCommand::Real => run_real_panel(cfg)?,
    };
    if let Some(dir) = &cfg.csv_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        report.write_rows_csv(&dir.join(format!("{}_rows.csv", report.experiment)))?;
    }
    let out = cli.out.as_deref().or(cfg.output.as_deref());
    emit(out, &report.to_json()?)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Argument(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args, &cfg),
        Command::Spectrum(args) => cmd_spectrum(cli, args, &cfg),
        Command::Project(args) => cmd_project(cli, args, &cfg),
        Command::Solve(args) => cmd_solve(cli, args, &cfg),
        Command::Bench { experiment } => cmd_bench(cli, *experiment, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

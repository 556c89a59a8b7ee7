//! `spde-lab`: batch front-end for solving, convergence studies and the
//! kernel and noise self-checks.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 explicit
//! scheme stability rejection, 4 numerical abort.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spde_lab::green::{rate_check_space, rate_check_time, RateCheck, SpaceCheckOptions};
use spde_lab::lattice::{BoundaryCondition, GridSpec};
use spde_lab::noise::{empirical_covariance, replica_rng, sample_path, CovarianceFactor};
use spde_lab::schemes::{check_stability, run, SchemeKind, SchemeRun};
use spde_lab::study::{run_study, StudyPlan};
use spde_lab::Error;

use config::{GreenCheck, RunConfig, TrajectoryFormat};

/// Slope bands of the kernel rate checks: space and time.
const SPACE_BAND: f64 = 0.3;
const TIME_BAND: f64 = 0.25;

#[derive(Parser)]
#[command(name = "spde-lab", version, about = "Finite-difference schemes for the stochastic heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set grid.n=32` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replica parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run one trajectory and write it to the output directory.
    Solve,
    /// Coupled-mesh Monte-Carlo convergence study.
    Study,
    /// Kernel approximation rate checks.
    GreenCheck,
    /// Empirical covariance of the sampled noise against the analytic one.
    NoiseCheck,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Io(_) => 1,
                Error::Stability { .. } => 3,
                Error::NumericalAbort { .. }
                | Error::TooManyAborts { .. }
                | Error::Quadrature { .. }
                | Error::Indefinite { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPDE_LAB_LOG", "error")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = config::parse(&text, &cli.overrides).map_err(CliError::Config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = PathBuf::from(&cfg.output.dir);
    match cli.command {
        Command::Solve => solve(&cfg, &out),
        Command::Study => study(&cfg, &out),
        Command::GreenCheck => green_check(&cfg, &out),
        Command::NoiseCheck => noise_check(&cfg, &out),
    }
}

/// Writes through a temporary file in `dir` that is renamed on success.
fn write_atomic(dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> spde_lab::Result<()>) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| CliError::Core(Error::Io(e.error)))?;
    log::info!("wrote {}", target.display());
    Ok(target)
}

/// Prints a report to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = cfg.grid_spec()?;
    let noise = cfg.noise_model()?;
    let scheme = SchemeRun::with_margin(
        grid,
        cfg.coefficient_set(),
        cfg.initial_condition(),
        noise,
        cfg.scheme_kind(),
        cfg.scheme.q,
    )?
    .with_seed(cfg.seed)
    .with_record(cfg.record_levels()?)?;
    let factor = CovarianceFactor::build(&noise, &grid)?;
    let slabs = sample_path(&factor, &mut replica_rng(cfg.seed, 0));
    let trajectory = run(&scheme, &slabs)?;
    let format = cfg.output.trajectory;
    if format != TrajectoryFormat::Binary {
        write_atomic(out, "trajectory.csv", |w| trajectory.write_csv(w))?;
    }
    if format != TrajectoryFormat::Csv {
        write_atomic(out, "trajectory.bin", |w| trajectory.write_binary(w))?;
    }
    let mut text = String::from("level,t,sup_norm\n");
    for field in trajectory.levels() {
        text += &format!("{},{},{:.6e}\n", field.level(), field.time(), field.sup_norm());
    }
    emit(&text)
}

fn study(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let section = cfg.study.as_ref().ok_or_else(|| CliError::Config("missing [study] section".into()))?;
    let grid = cfg.grid_spec()?;
    let mut plan = StudyPlan::new(
        cfg.axis().expect("study section present"),
        grid,
        section.ladder.clone(),
        section.replicas,
        cfg.noise_model()?,
        cfg.coefficient_set(),
        cfg.initial_condition(),
        cfg.scheme_kind(),
        cfg.seed,
    );
    plan.q = cfg.scheme.q;
    if let Some(t) = section.t_star {
        plan.t_star = t;
    }
    if let Some(x) = &section.x_star {
        plan.x_star = x.clone();
    }
    let report = run_study(&plan)?;
    write_atomic(out, "study.csv", |w| report.write_csv(w))?;
    write_atomic(out, "study_plot.dat", |w| report.write_plot_data(w))?;
    write_atomic(out, "study_moments.csv", |w| report.write_moments_csv(w))?;
    emit(&format!(
        "{} study, noise {}: slope_mid {:.4} (sd {:.4}), slope_sup {:.4}, theory {}, replicas {}, aborted {}\n",
        report.axis.label(),
        report.noise_label,
        report.fit_mid.slope,
        report.fit_mid.slope_stddev,
        report.fit_sup.slope,
        report.theory_exponent,
        report.replicas,
        report.aborted
    ))
}

fn green_check(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let alpha = cfg
        .noise_model()?
        .alpha()
        .ok_or_else(|| CliError::Config("green-check needs riesz noise with noise.alpha".into()))?;
    if cfg.grid.dim != 1 {
        return Err(CliError::Config("green-check is implemented for grid.dim = 1".into()));
    }
    let g = &cfg.green;
    if g.checks.is_empty() {
        return Err(CliError::Config("green.checks is empty".into()));
    }
    let time_grid = GridSpec::new(1, g.time_n, 1, cfg.grid.horizon, BoundaryCondition::Dirichlet)?;
    if g.checks.contains(&GreenCheck::TimeExplicit) {
        for &m in &g.time_ladder {
            check_stability(&time_grid.with_m(m)?, cfg.scheme.q)?;
        }
    }
    let mut results: Vec<(RateCheck, f64)> = Vec::new();
    for check in &g.checks {
        let result = match check {
            GreenCheck::Space => {
                let opts = SpaceCheckOptions { refine: g.refine, x_resolution: g.x_resolution, rel_tol: g.rel_tol };
                (rate_check_space(alpha, &g.space_ladder, &opts)?, SPACE_BAND)
            }
            GreenCheck::TimeImplicit => (rate_check_time(alpha, &time_grid, &g.time_ladder, SchemeKind::Implicit)?, TIME_BAND),
            GreenCheck::TimeExplicit => (rate_check_time(alpha, &time_grid, &g.time_ladder, SchemeKind::Explicit)?, TIME_BAND),
        };
        results.push(result);
    }
    write_atomic(out, "green.csv", |w| {
        for (i, (r, _)) in results.iter().enumerate() {
            r.write_csv(&mut *w, i == 0)?;
        }
        Ok(())
    })?;
    let mut text = String::new();
    for (r, band) in &results {
        text += &format!(
            "{}: slope {:.4}, target {:.4} +- {band}: {}\n",
            r.kind.label(),
            r.slope,
            r.target_slope,
            if r.within(*band) { "within band" } else { "outside band" }
        );
    }
    emit(&text)
}

fn noise_check(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let grid = cfg.grid_spec()?;
    let factor = CovarianceFactor::build(&cfg.noise_model()?, &grid)?;
    let check = empirical_covariance(&factor, cfg.noise_check.samples, cfg.seed)?;
    write_atomic(out, "noise_check.csv", |w| check.write_csv(w))?;
    let target = check.entries.iter().filter(|e| e.a == e.b).map(|e| e.analytic).fold(0.0, f64::max);
    emit(&format!(
        "noise check: {} cells, {} samples, target variance {target}, max deviation {:.3} SE\n",
        factor.cells(),
        check.samples,
        check.max_deviation()
    ))
}

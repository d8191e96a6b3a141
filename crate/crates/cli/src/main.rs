//! Experiment runner CLI: seeded replicated runs, parameter sweeps,
//! reference optima, and the fast self-check suite.
//!
//! Exit codes: 0 on success, 2 for configuration problems (the message
//! names the offending key or path), 3 for runtime aborts such as a
//! diverging update signal.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aoi_pg_core::check::run_checks;
use aoi_pg_core::config::ExperimentConfig;
use aoi_pg_core::oracle::{ge_discard_optimize, ge_wait_optimize, GeDiscardProblem, GeWaitProblem};
use aoi_pg_core::sim::{
    oracle_reference, run_replicated, run_sweep, write_outputs, write_sweep_csv, SimError,
};

#[derive(Parser)]
#[command(name = "aoi-pg", version, about = "Age-of-information scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated experiment and write its CSV artifacts.
    Run(RunArgs),
    /// Rerun an experiment across its declared sweep axis.
    Sweep(RunArgs),
    /// Compute a reference optimum for a two-state channel problem.
    Oracle(OracleArgs),
    /// Run the fast invariant self-checks.
    Check,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; created atomically, never overwritten without --force.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for replications (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write gnuplot scripts next to the CSV files.
    #[arg(long)]
    emit_plots: bool,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    problem: OracleCommand,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Optimal per-state waits and their average cost (closed form).
    GeWait(OracleIo),
    /// Optimal cancellation threshold and its average cost (seeded stream).
    GeDiscard(OracleIo),
}

#[derive(Args)]
struct OracleIo {
    /// Path to the problem JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the one-row oracle.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

/// Failure category; decides the process exit code.
enum CliError {
    /// Bad invocation or configuration (exit 2).
    Config(String),
    /// Abort while running (exit 3).
    Runtime(String),
    /// Environment trouble such as I/O (exit 1).
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
            Self::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Runtime(m) | Self::Other(m) => m,
        }
    }
}

impl From<SimError> for CliError {
    fn from(error: SimError) -> Self {
        match &error {
            SimError::Config(_) => Self::Config(error.to_string()),
            SimError::Run { .. } | SimError::StepCap { .. } => Self::Runtime(error.to_string()),
            _ => Self::Other(error.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AOI_PG_LOG", "error")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {}", error.message());
            ExitCode::from(error.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Oracle(args) => match args.problem {
            OracleCommand::GeWait(io) => cmd_oracle_wait(io),
            OracleCommand::GeDiscard(io) => cmd_oracle_discard(io),
        },
        Command::Check => cmd_check(),
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))
}

fn load_experiment(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let text = read_file(&args.config)?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| {
        CliError::Config(format!("config {}: {e}", args.config.display()))
    })?;
    if let Some(seed) = args.seed {
        config.sim.master_seed = seed;
    }
    config
        .validate()
        .map_err(|e| CliError::Config(format!("config {}: {e}", args.config.display())))?;
    Ok(config)
}

fn configure_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Writes `build` into a temporary sibling directory, then renames it into
/// place so readers never observe a half-written output directory.
fn publish<F>(out: &Path, force: bool, build: F) -> Result<(), CliError>
where
    F: FnOnce(&Path) -> Result<(), CliError>,
{
    if out.exists() && !force {
        return Err(CliError::Config(format!(
            "output directory {} already exists; pass --force to replace it",
            out.display()
        )));
    }
    let name = out
        .file_name()
        .ok_or_else(|| CliError::Config(format!("invalid output path {}", out.display())))?;
    let staging = out.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)
            .map_err(|e| CliError::Other(format!("clearing {}: {e}", staging.display())))?;
    }
    fs::create_dir_all(&staging)
        .map_err(|e| CliError::Other(format!("creating {}: {e}", staging.display())))?;
    let result = build(&staging);
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
        return result;
    }
    if out.exists() {
        fs::remove_dir_all(out)
            .map_err(|e| CliError::Other(format!("replacing {}: {e}", out.display())))?;
    }
    fs::rename(&staging, out)
        .map_err(|e| CliError::Other(format!("publishing {}: {e}", out.display())))?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    configure_jobs(args.jobs)?;
    let config = load_experiment(&args)?;
    log::info!("running {} replications", config.sim.replications);
    let summary = run_replicated(&config)?;
    let reference = match oracle_reference(&config) {
        Ok(reference) => reference,
        Err(error) => {
            log::warn!("no oracle reference available: {error}");
            None
        }
    };
    publish(&args.out, args.force, |dir| {
        write_outputs(&summary, reference.as_ref(), dir).map_err(CliError::from)?;
        if args.emit_plots {
            write_run_plots(dir)?;
        }
        Ok(())
    })?;
    let mut line = format!(
        "final beta {:.6} +/- {:.6} over {} runs",
        summary.beta_mean,
        summary.beta_std,
        summary.runs.len()
    );
    if let Some(reference) = &reference {
        let beta = reference.beta();
        line.push_str(&format!(
            ", oracle {:.6} (gap {:+.2}%)",
            beta,
            100.0 * (summary.beta_mean - beta) / beta
        ));
    }
    println!("{line}");
    println!("outputs written to {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: RunArgs) -> Result<(), CliError> {
    configure_jobs(args.jobs)?;
    let config = load_experiment(&args)?;
    let points = run_sweep(&config)?;
    publish(&args.out, args.force, |dir| {
        write_sweep_csv(&config, &points, dir).map_err(CliError::from)?;
        fs::write(dir.join("config.resolved.json"), config.resolved_json())
            .map_err(|e| CliError::Other(format!("writing resolved config: {e}")))?;
        if args.emit_plots {
            write_sweep_plots(dir)?;
        }
        Ok(())
    })?;
    for point in &points {
        let oracle = point
            .oracle_beta
            .map(|b| format!(" oracle {b:.6}"))
            .unwrap_or_default();
        println!(
            "value {:>8.4}: beta {:.6} +/- {:.6}{oracle} (zero-wait {:.6})",
            point.value, point.summary.beta_mean, point.summary.beta_std, point.baseline_beta
        );
    }
    println!("outputs written to {}", args.out.display());
    Ok(())
}

fn cmd_oracle_wait(io: OracleIo) -> Result<(), CliError> {
    let text = read_file(&io.config)?;
    let problem: GeWaitProblem = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", io.config.display())))?;
    let solution = ge_wait_optimize(&problem)
        .map_err(|e| CliError::Config(format!("config {}: {e}", io.config.display())))?;
    publish(&io.out, io.force, |dir| {
        let mut writer = csv::Writer::from_path(dir.join("oracle.csv"))
            .map_err(|e| CliError::Other(format!("oracle.csv: {e}")))?;
        writer
            .write_record(["z0", "z1", "beta"])
            .and_then(|_| {
                writer.write_record([
                    format!("{:.12}", solution.z0),
                    format!("{:.12}", solution.z1),
                    format!("{:.12}", solution.beta),
                ])
            })
            .map_err(|e| CliError::Other(format!("oracle.csv: {e}")))?;
        writer.flush().map_err(|e| CliError::Other(format!("oracle.csv: {e}")))?;
        Ok(())
    })?;
    println!("z0 = {:.6}", solution.z0);
    println!("z1 = {:.6}", solution.z1);
    println!("beta = {:.6}", solution.beta);
    Ok(())
}

fn cmd_oracle_discard(io: OracleIo) -> Result<(), CliError> {
    let text = read_file(&io.config)?;
    let problem: GeDiscardProblem = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", io.config.display())))?;
    let solution = ge_discard_optimize(&problem)
        .map_err(|e| CliError::Config(format!("config {}: {e}", io.config.display())))?;
    publish(&io.out, io.force, |dir| {
        let mut writer = csv::Writer::from_path(dir.join("oracle.csv"))
            .map_err(|e| CliError::Other(format!("oracle.csv: {e}")))?;
        writer
            .write_record(["x0", "beta"])
            .and_then(|_| {
                writer.write_record([
                    format!("{:.12}", solution.x0),
                    format!("{:.12}", solution.beta),
                ])
            })
            .map_err(|e| CliError::Other(format!("oracle.csv: {e}")))?;
        writer.flush().map_err(|e| CliError::Other(format!("oracle.csv: {e}")))?;
        Ok(())
    })?;
    println!("x0 = {:.6}", solution.x0);
    println!("beta = {:.6}", solution.beta);
    Ok(())
}

fn cmd_check() -> Result<(), CliError> {
    let report = run_checks();
    for result in &report.results {
        let verdict = if result.passed { "ok" } else { "FAILED" };
        println!("{:<32} {verdict:<8} {}", result.name, result.detail);
    }
    if report.all_passed() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Runtime("self-check failed".into()))
    }
}

fn write_plot(dir: &Path, name: &str, script: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), script)
        .map_err(|e| CliError::Other(format!("writing {name}: {e}")))
}

fn write_run_plots(dir: &Path) -> Result<(), CliError> {
    write_plot(
        dir,
        "beta_vs_time.gp",
        "set datafile separator comma\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 960,640\n\
         set output 'beta_vs_time.png'\n\
         set xlabel 'time'\n\
         set ylabel 'average cost estimate'\n\
         set logscale x\n\
         plot 'runs.csv' using 3:4 with dots title 'beta estimate'\n",
    )?;
    write_plot(
        dir,
        "policy.gp",
        "set datafile separator comma\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 960,640\n\
         set output 'policy.png'\n\
         set xlabel 'observed delay'\n\
         set ylabel 'mean action'\n\
         plot 'policy.csv' using 2:4 with points pointtype 7 pointsize 0.4 title 'mean action'\n",
    )
}

fn write_sweep_plots(dir: &Path) -> Result<(), CliError> {
    write_plot(
        dir,
        "sweep.gp",
        "set datafile separator comma\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 960,640\n\
         set output 'sweep.png'\n\
         set xlabel 'swept value'\n\
         set ylabel 'final average cost'\n\
         plot 'sweep.csv' using 2:3:4 with yerrorlines title 'learned', \\\n\
              'sweep.csv' using 2:6 with linespoints title 'zero-wait'\n",
    )
}

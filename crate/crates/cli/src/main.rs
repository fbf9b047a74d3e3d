//! Command-line driver for the particle mean-field-game solver.
//!
//! Subcommands:
//!
//! * `run` — solve the configured game and write artifacts (canonical config
//!   echo, per-epoch metrics CSV, JSON summary, trained velocity network,
//!   final particle trajectories) to an output directory.
//! * `residual` — recompute the first-order residual of a saved trajectory
//!   ensemble under a configuration's couplings.
//! * `sample` — push fresh initial samples through a saved velocity network.
//! * `oracle` — write closed-form linear-quadratic optimal trajectories.
//!
//! Exit codes: 0 success, 1 runtime failure (artifacts for an aborted run
//! are still written), 2 configuration or usage error. Execution is
//! single-threaded and fully deterministic: repeating a run with the same
//! configuration and seed reproduces every artifact byte for byte.

mod artifacts;
mod config;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nashflow::{
    integrate, quadratic_oc_oracle, residual, sample_initial, CouplingSpec, FrozenCosts, Mlp,
    ParticleEnsemble, RunOutput, TimeGrid,
};
use ndarray::Array2;

use config::LoadedConfig;

#[derive(Parser)]
#[command(
    name = "nashflow",
    version,
    about = "Particle solver for first-order mean-field games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonCfg {
    /// Built-in experiment: quadratic_oc, nonpotential_kernel, or
    /// checkerboard_to_gaussian.
    #[arg(long)]
    preset: Option<String>,

    /// `key = value` configuration file overlaying the preset (with no
    /// preset, it overlays the quadratic_oc base).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads. Only 1 is supported; the solver is single-threaded by
    /// design so that runs are reproducible.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured game and write run artifacts.
    Run {
        #[command(flatten)]
        common: CommonCfg,
        /// Directory receiving config.txt, report.csv, summary.json,
        /// velocity.nn, and ensemble.csv.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Recompute the residual of a saved ensemble under a configuration's
    /// couplings.
    Residual {
        #[command(flatten)]
        common: CommonCfg,
        /// Trajectory CSV produced by `run`, `sample`, or `oracle`.
        #[arg(long)]
        ensemble: PathBuf,
    },
    /// Integrate fresh initial samples through a saved velocity network.
    Sample {
        #[command(flatten)]
        common: CommonCfg,
        /// Velocity network file written by `run`.
        #[arg(long)]
        network: PathBuf,
        /// Number of particles (defaults to the configured count).
        #[arg(long)]
        count: Option<usize>,
        /// Directory receiving trajectories.csv.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write closed-form optimal trajectories for the linear-quadratic
    /// control problem (integral state cost ½λ‖x‖², terminal cost ½g‖x‖²).
    Oracle {
        /// State cost weight λ.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Terminal cost weight g.
        #[arg(long, default_value_t = 1.0)]
        g: f64,
        /// Starting point, comma-separated coordinates.
        #[arg(long, default_value = "1.0")]
        x0: String,
        /// Number of (identical) particles to emit.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Number of time steps on [0, 1].
        #[arg(long, default_value_t = 100)]
        time_steps: usize,
        /// Directory receiving oracle.csv.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

/// Configuration errors exit with status 2, runtime failures with status 1.
enum CliError {
    Config(String),
    Runtime(String),
}

fn lib_err(err: nashflow::Error) -> CliError {
    match err {
        nashflow::Error::Config(_) => CliError::Config(err.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn io_err(context: &str, err: std::io::Error) -> CliError {
    CliError::Runtime(format!("{context}: {err}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, out_dir } => cmd_run(&common, &out_dir),
        Command::Residual { common, ensemble } => cmd_residual(&common, &ensemble),
        Command::Sample {
            common,
            network,
            count,
            out_dir,
        } => cmd_sample(&common, &network, count, &out_dir),
        Command::Oracle {
            lambda,
            g,
            x0,
            count,
            time_steps,
            out_dir,
        } => cmd_oracle(lambda, g, &x0, count, time_steps, &out_dir),
    }
}

fn load_common(common: &CommonCfg) -> Result<LoadedConfig, CliError> {
    if common.threads != 1 {
        return Err(CliError::Config(format!(
            "only single-threaded execution is supported, got --threads {}",
            common.threads
        )));
    }
    config::load(
        common.preset.as_deref(),
        common.config.as_deref(),
        common.seed,
    )
    .map_err(CliError::Config)
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    artifacts::write_atomic(path, bytes)
        .map_err(|e| io_err(&format!("cannot write {}", path.display()), e))
}

fn cmd_run(common: &CommonCfg, out_dir: &Path) -> Result<(), CliError> {
    let loaded = load_common(common)?;
    let RunOutput {
        velocity,
        report,
        ensemble,
    } = nashflow::run(&loaded.solver).map_err(lib_err)?;

    write_artifact(&out_dir.join("config.txt"), loaded.echo.as_bytes())?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(lib_err)?;
    write_artifact(&out_dir.join("report.csv"), &csv)?;

    let summary = artifacts::summary_json(&loaded.echo, &report);
    write_artifact(&out_dir.join("summary.json"), summary.as_bytes())?;

    let mut net_bytes = Vec::new();
    velocity.save(&mut net_bytes).map_err(lib_err)?;
    write_artifact(&out_dir.join("velocity.nn"), &net_bytes)?;

    let mut ens_bytes = Vec::new();
    ensemble.write_csv(&mut ens_bytes).map_err(lib_err)?;
    write_artifact(&out_dir.join("ensemble.csv"), &ens_bytes)?;

    if let Some(reason) = &report.abort {
        return Err(CliError::Runtime(format!(
            "run aborted ({reason}); partial artifacts written to {}",
            out_dir.display()
        )));
    }
    let epochs = report.records.len();
    match report.records.last() {
        Some(last) => println!(
            "completed {epochs} epochs: objective {} residual {} -> {}",
            last.objective.total,
            last.residual,
            out_dir.display()
        ),
        None => println!("completed 0 epochs -> {}", out_dir.display()),
    }
    Ok(())
}

fn cmd_residual(common: &CommonCfg, ensemble: &Path) -> Result<(), CliError> {
    let loaded = load_common(common)?;
    if matches!(loaded.solver.terminal, CouplingSpec::KlTerminal { .. }) {
        return Err(CliError::Config(
            "the KL terminal coupling needs a trained classifier, which run artifacts do not \
             include; the residual subcommand supports zero, kernel, and quadratic couplings"
                .into(),
        ));
    }
    let file = File::open(ensemble)
        .map_err(|e| io_err(&format!("cannot open {}", ensemble.display()), e))?;
    let ens = ParticleEnsemble::read_csv(BufReader::new(file)).map_err(lib_err)?;
    let costs = FrozenCosts::freeze_self(
        &loaded.solver.interaction,
        &loaded.solver.terminal,
        &ens,
        None,
    )
    .map_err(lib_err)?;
    let value = residual(&ens, &costs).map_err(lib_err)?;
    println!("residual = {value}");
    Ok(())
}

fn cmd_sample(
    common: &CommonCfg,
    network: &Path,
    count: Option<usize>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let loaded = load_common(common)?;
    let file = File::open(network)
        .map_err(|e| io_err(&format!("cannot open {}", network.display()), e))?;
    let net = Mlp::load(BufReader::new(file)).map_err(lib_err)?;
    let n = count.unwrap_or(loaded.solver.particles);
    let x0 = sample_initial(&loaded.solver.initial, n, loaded.solver.seed).map_err(lib_err)?;
    let grid = TimeGrid::new(loaded.solver.time_steps).map_err(lib_err)?;
    let ens = integrate(&net, x0.view(), grid, loaded.solver.integrator).map_err(lib_err)?;
    let mut bytes = Vec::new();
    ens.write_csv(&mut bytes).map_err(lib_err)?;
    let path = out_dir.join("trajectories.csv");
    write_artifact(&path, &bytes)?;
    println!("wrote {n} trajectories -> {}", path.display());
    Ok(())
}

fn cmd_oracle(
    lambda: f64,
    g: f64,
    x0: &str,
    count: usize,
    time_steps: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    let coords: Vec<f64> = x0
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|e| CliError::Config(format!("invalid --x0 coordinate {tok:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if coords.is_empty() || count == 0 {
        return Err(CliError::Config(
            "--x0 needs at least one coordinate and --count must be positive".into(),
        ));
    }
    let d = coords.len();
    let starts = Array2::from_shape_fn((count, d), |(_, k)| coords[k]);
    let grid = TimeGrid::new(time_steps).map_err(lib_err)?;
    let ens = quadratic_oc_oracle(lambda, g, starts.view(), grid).map_err(lib_err)?;
    let mut bytes = Vec::new();
    ens.write_csv(&mut bytes).map_err(lib_err)?;
    let path = out_dir.join("oracle.csv");
    write_artifact(&path, &bytes)?;
    println!("wrote {count} oracle trajectories -> {}", path.display());
    Ok(())
}

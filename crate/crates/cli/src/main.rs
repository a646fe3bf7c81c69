use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use sparobs::certify::{delta_for_certificate, recovery_constants};
use sparobs::harness::{emit_report, gen_gaussian_matrix, run_experiment, ExperimentConfig, ReportFormat, RunOptions};
use sparobs::io::{read_matrix, write_matrix_csv, write_vector_csv};
use sparobs::linalg::spectral_norm;
use sparobs::model::{DynamicalSystem, SparseProblem};
use sparobs::ode::{integrate, IntegrationConfig, DEFAULT_STEPS};
use sparobs::recover::{l0_oracle, recover_initial_state, SolverConfig, DEFAULT_ORACLE_BUDGET};
use sparobs::rip::{rip_constant_exact, DEFAULT_EXACT_BUDGET};

#[derive(Parser)]
#[command(name = "sparobs", version, about = "Sparse observability of ODE initial states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RipMode {
    Exact,
    Bounds,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct IntegrationArgs {
    /// Fixed RK4 step count.
    #[arg(long, conflicts_with = "rk45_tol")]
    steps: Option<usize>,
    /// Use adaptive Dormand-Prince with this tolerance.
    #[arg(long)]
    rk45_tol: Option<f64>,
}

impl IntegrationArgs {
    fn config(&self) -> IntegrationConfig {
        match (self.steps, self.rk45_tol) {
            (_, Some(tolerance)) => IntegrationConfig::Rk45 { tolerance },
            (steps, None) => IntegrationConfig::Rk4 { steps: steps.unwrap_or(DEFAULT_STEPS) },
        }
    }
}

#[derive(clap::Args)]
struct RecoverArgs {
    /// Problem JSON: system, measurement, observation, sparsity.
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    solver_config: Option<PathBuf>,
    /// Where the estimate CSV goes.
    #[arg(long, default_value = "estimate.csv")]
    estimate_csv: PathBuf,
    #[command(flatten)]
    integration: IntegrationArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Restricted isometry constant of a matrix.
    Rip {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        sparsity: usize,
        #[arg(long, value_enum, default_value = "exact")]
        mode: RipMode,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest number of supports to enumerate in exact mode.
        #[arg(long, default_value_t = DEFAULT_EXACT_BUDGET)]
        budget: u128,
    },
    /// Observability and recovery certificate for a system and matrix.
    Certify {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        sparsity: usize,
        /// Ratio of largest to smallest objective weight.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long)]
        time: f64,
        #[arg(long, default_value_t = DEFAULT_EXACT_BUDGET)]
        budget: u128,
    },
    /// Weighted l1 recovery of the initial state.
    Recover(RecoverArgs),
    /// Exhaustive sparsest-fit recovery for small problems.
    Oracle {
        #[command(flatten)]
        args: RecoverArgs,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: u128,
    },
    /// Seeded batch of generate, certify, recover, compare trials.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also run the solver on trials without a certificate.
        #[arg(long)]
        force: bool,
    },
    /// Trajectory of a system as CSV.
    Integrate {
        #[arg(long)]
        system: PathBuf,
        /// Initial state as comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        time: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        integration: IntegrationArgs,
    },
    /// Seeded Gaussian matrix with N(0, scale²/n) entries, written as CSV.
    GenMatrix {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_recovery(args: &RecoverArgs, oracle_budget: Option<u128>) -> Result<()> {
    let problem: SparseProblem = read_json(&args.problem)?;
    let solver = match &args.solver_config {
        Some(p) => read_json(p)?,
        None => SolverConfig::default(),
    };
    let icfg = args.integration.config();
    let outcome = match oracle_budget {
        Some(budget) => l0_oracle(&problem, icfg, &solver, budget)?,
        None => recover_initial_state(&problem, icfg, &solver)?,
    };
    let mut out = create(&args.estimate_csv)?;
    write_vector_csv(&outcome.estimate, &mut out)?;
    out.flush()?;
    print_json(&outcome)
}

/// `Ok(false)` means the command ran but a checked bound failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Rip { matrix, sparsity, mode, samples, seed, budget } => {
            let a = read_matrix(&matrix)?;
            match mode {
                RipMode::Exact => print_json(&rip_constant_exact(&a, sparsity, budget)?)?,
                RipMode::Bounds => {
                    let (lower, upper) = sparobs::rip::rip_constant_bounds(&a, sparsity, samples, seed)?;
                    print_json(&json!({ "lower": lower, "upper": upper }))?;
                }
            }
        }
        Command::Certify { system, matrix, sparsity, tau, time, budget } => {
            let system: DynamicalSystem = read_json(&system)?;
            let a = read_matrix(&matrix)?;
            if a.ncols() != system.dim() {
                bail!("matrix has {} columns, system dimension is {}", a.ncols(), system.dim());
            }
            if sparsity == 0 || sparsity > a.ncols() {
                bail!("sparsity {sparsity} must lie in 1..={}", a.ncols());
            }
            let rip = delta_for_certificate(&a, sparsity, budget)?;
            let cert = recovery_constants(rip.delta, tau, system.lipschitz(), time, spectral_norm(&a))?;
            print_json(&cert)?;
        }
        Command::Recover(args) => run_recovery(&args, None)?,
        Command::Oracle { args, budget } => run_recovery(&args, Some(budget))?,
        Command::Experiment { config, out, format, workers, force } => {
            let cfg = ExperimentConfig::from_path(&config).with_context(|| format!("config {}", config.display()))?;
            let records = run_experiment(&cfg, RunOptions { workers, force })?;
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            let summary = emit_report(&records, format, &out, cfg.bound_tolerance)?;
            println!("{}", summary.footer());
            return Ok(summary.all_bounds_hold);
        }
        Command::Integrate { system, x0, time, out, integration } => {
            let system: DynamicalSystem = read_json(&system)?;
            let traj = integrate(&system, &DVector::from_vec(x0), time, integration.config())?;
            let mut w = create(&out)?;
            traj.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::GenMatrix { n, m, seed, scale, out } => {
            let a = gen_gaussian_matrix(n, m, seed, scale)?;
            let mut w = create(&out)?;
            write_matrix_csv(&a, &mut w)?;
            w.flush()?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

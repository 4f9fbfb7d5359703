//! `compsem`: fit structural equation models with latent variables and
//! composites from the command line.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use compsem::identify::{jacobian_rank_check, JACOBIAN_RANK};
use compsem::{
    build_parameter_table, check_identification, data, fit, fit_statistics, parse_model, scenario,
    standardize, start_values, CheckStatus, ChisqMultiplier, CsvOptions, Divisor, Error, Estimator, FitOptions,
    FitResult, IdentificationReport,
    ModelStructure, MultiStart, OptimizerOptions, ScalingOptions,
};

use report::Report;

#[derive(Parser)]
#[command(name = "compsem", version, about = "Structural equation models with latent variables and composites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a model and report fit and parameters.
    Fit(FitArgs),
    /// Write a sample whose covariance equals the reference population exactly.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Model syntax file.
    #[arg(long)]
    model: PathBuf,
    /// Raw data, CSV with a header row.
    #[arg(long, conflicts_with = "cov", required_unless_present = "cov")]
    data: Option<PathBuf>,
    /// Covariance matrix, CSV with a header row and matching first column.
    #[arg(long, requires = "n")]
    cov: Option<PathBuf>,
    /// Sample size for `--cov`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Ml)]
    estimator: EstimatorArg,
    /// Add standardized estimates to the report.
    #[arg(long)]
    standardized: bool,
    /// Estimate composite-indicator covariances instead of fixing them to S.
    #[arg(long)]
    estimate_t: bool,
    /// Scale constructs by unit variance instead of the first indicator.
    #[arg(long)]
    unit_variance: bool,
    /// Fit even when an identification check fails.
    #[arg(long)]
    force: bool,
    #[arg(long, value_enum, default_value_t = MultiplierArg::Nm1)]
    chisq_multiplier: MultiplierArg,
    #[arg(long, value_enum, default_value_t = OutputArg::Text)]
    output: OutputArg,
    /// Threads for the numerical Hessian.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Seed for perturbed restarts; enables multi-start.
    #[arg(long)]
    seed: Option<u64>,
    /// Restarts in addition to the default start when `--seed` is given.
    #[arg(long, default_value_t = 4, requires = "seed")]
    starts: usize,
    #[arg(long)]
    gradient_tol: Option<f64>,
    #[arg(long)]
    f_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Also write the reference model syntax here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Ml,
    Gls,
}

#[derive(Clone, Copy, ValueEnum)]
enum MultiplierArg {
    /// N − 1
    Nm1,
    N,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputArg {
    Text,
    Json,
}

/// A run that ends with a nonzero exit code.
struct Failure {
    code: u8,
    message: String,
}

const EXIT_PARSE: u8 = 2;
const EXIT_IDENTIFICATION: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_IO: u8 = 5;

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
    }

    /// Exit code for a library error raised while loading data.
    fn data(e: Error) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }

    /// Exit code for a library error raised while reading the model.
    fn model(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::new(EXIT_IO, e.to_string()),
            _ => Failure::new(EXIT_PARSE, e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COMPSEM_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => run_fit(&args),
        Command::Simulate(args) => run_simulate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run_fit(args: &FitArgs) -> Result<(), Failure> {
    let source = std::fs::read_to_string(&args.model).map_err(|e| Failure::io(&args.model, e))?;
    let spec = parse_model(&source).map_err(Failure::model)?;

    let moments = match (&args.data, &args.cov) {
        (Some(path), _) => {
            let dataset = data::read_csv(path, &CsvOptions::default()).map_err(Failure::data)?;
            if dataset.dropped_rows > 0 {
                warn!("{} incomplete rows dropped", dataset.dropped_rows);
            }
            data::sample_moments(&dataset, Divisor::NMinusOne).map_err(Failure::data)?
        }
        (None, Some(path)) => {
            let n = args.n.ok_or_else(|| Failure::new(EXIT_PARSE, "--cov requires --n"))?;
            data::read_covariance_csv(path, n).map_err(Failure::data)?
        }
        (None, None) => return Err(Failure::new(EXIT_PARSE, "one of --data or --cov is required")),
    };

    let scaling = ScalingOptions {
        unit_variance: args.unit_variance,
        estimate_t: args.estimate_t,
    };
    let table = build_parameter_table(&spec, &moments.names, scaling).map_err(Failure::model)?;
    let mut ident = check_identification(&spec, &table);
    let table = start_values(&table, &moments).map_err(Failure::data)?;
    if let Ok(structure) = ModelStructure::new(&table) {
        ident.checks.push(jacobian_rank_check(&structure, &table.start_theta()));
    }

    if !ident.passed() {
        let failed: Vec<String> = ident.failures().map(|c| format!("{}: {}", c.name, c.message)).collect();
        let mut failed = failed.join("; ");
        if ident.df < 0 {
            failed = format!("df = {} is negative; {failed}", ident.df);
        }
        if !args.force {
            eprint!("{ident}");
            return Err(Failure::new(
                EXIT_IDENTIFICATION,
                format!("identification failed ({failed}); use --force to fit anyway"),
            ));
        }
        warn!("identification failed, continuing because of --force: {failed}");
    }

    let defaults = OptimizerOptions::default();
    let options = FitOptions {
        estimator: match args.estimator {
            EstimatorArg::Ml => Estimator::Ml,
            EstimatorArg::Gls => Estimator::Gls,
        },
        optimizer: OptimizerOptions {
            gradient_tol: args.gradient_tol.unwrap_or(defaults.gradient_tol),
            f_tol: args.f_tol.unwrap_or(defaults.f_tol),
            max_iter: args.max_iter.unwrap_or(defaults.max_iter),
        },
        multiplier: match args.chisq_multiplier {
            MultiplierArg::Nm1 => ChisqMultiplier::NMinusOne,
            MultiplierArg::N => ChisqMultiplier::N,
        },
        threads: args.threads.max(1),
        multi_start: args.seed.map(|seed| MultiStart {
            starts: args.starts,
            seed,
        }),
    };
    let result = fit(&moments, &table, &options)
        .map_err(|e| Failure::new(EXIT_NOT_CONVERGED, format!("estimation failed: {e}")))?;
    info!(
        "F = {:.6e} after {} iterations (|g| = {:.2e})",
        result.f_min, result.iterations, result.gradient_norm
    );
    recheck_jacobian_at_estimates(&mut ident, &result);
    let stats = fit_statistics(&result, &moments, ident.df)
        .map_err(|e| Failure::new(EXIT_NOT_CONVERGED, format!("fit statistics: {e}")))?;
    let standardized = args.standardized.then(|| standardize(&result));

    let report = Report {
        ident: &ident,
        result: &result,
        stats: &stats,
        standardized: standardized.as_ref(),
    };
    match args.output {
        OutputArg::Text => print!("{}", report.text()),
        OutputArg::Json => println!("{}", report.json()),
    }
    for w in &result.warnings {
        warn!("{w}");
    }
    if result.converged {
        Ok(())
    } else {
        Err(Failure::new(EXIT_NOT_CONVERGED, "optimizer did not converge"))
    }
}

/// Zero start values for structural paths can leave composite weights locally
/// unidentified; a deficient rank at the start is re-examined at θ̂.
fn recheck_jacobian_at_estimates(ident: &mut IdentificationReport, result: &FitResult) {
    let Some(check) = ident.checks.iter_mut().find(|c| c.name == JACOBIAN_RANK) else {
        return;
    };
    if check.status != CheckStatus::Warning {
        return;
    }
    let at_estimates = jacobian_rank_check(&result.structure, &result.theta_hat);
    if at_estimates.status == CheckStatus::Pass {
        check.status = CheckStatus::Pass;
        check.message = format!("{} at the estimates ({})", at_estimates.message, check.message.to_lowercase());
    } else {
        check.message = format!("{}; also deficient at the estimates", check.message);
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let names = scenario::observed_names();
    let dataset = data::exact_population_sample(&names, &scenario::population_sigma(), args.n)
        .map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    dataset.write_csv(&args.out).map_err(Failure::data)?;
    if let Some(path) = &args.model_out {
        std::fs::write(path, scenario::MODEL).map_err(|e| Failure::io(path, e))?;
    }
    Ok(())
}

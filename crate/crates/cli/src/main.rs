mod calibrate;
mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cvagrid_core::CvaError;

use config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "cvagrid",
    version,
    about = "Grid-parallel CVA with rating-based credit scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightScheme {
    InverseTenor,
    Uniform,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a risk-neutral transition matrix to a cumulative PD table.
    CalibrateMatrix(calibrate::CalibrateArgs),
    /// Generate and store the market scenario sets.
    GenScenarios(ConfigArgs),
    /// Plan valuation jobs and run them on worker processes.
    Value(ConfigArgs),
    /// Collect CVA from stored value cubes.
    Aggregate(ConfigArgs),
    /// Scenario generation, valuation and aggregation in one go.
    Run(ConfigArgs),
    /// Spread and market sensitivities of a finished run.
    Greeks {
        #[command(flatten)]
        base: ConfigArgs,
        #[arg(long)]
        netting_set: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        spread_bump: f64,
        #[arg(long, default_value_t = 1e-4, allow_hyphen_values = true)]
        curve_shift: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        vol_shift: f64,
        /// Central differences for spread deltas.
        #[arg(long)]
        central: bool,
    },
    /// CVA change from adding a deal to a netting set of a finished run.
    Incremental {
        #[command(flatten)]
        base: ConfigArgs,
        /// JSON file holding one deal.
        #[arg(long)]
        deal: PathBuf,
        #[arg(long)]
        netting_set: String,
        /// Counterparty of a new, empty netting set.
        #[arg(long, requires = "self_entity")]
        counterparty: Option<String>,
        /// Own entity of a new, empty netting set.
        #[arg(long = "self", requires = "counterparty")]
        self_entity: Option<String>,
    },
    /// CVA across counterparty credit-to-rate correlations.
    Wrongway {
        #[command(flatten)]
        base: ConfigArgs,
        #[arg(long)]
        netting_set: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        correlations: Vec<f64>,
    },
    /// Exercise boundary of a Bermudan deal under counterparty default rates.
    Boundary {
        #[command(flatten)]
        base: ConfigArgs,
        #[arg(long)]
        deal: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 0.4)]
        recovery: f64,
    },
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        jobs: Vec<usize>,
    },
}

/// Solver finished without meeting its stopping rule.
#[derive(Debug)]
pub struct NotConverged(pub String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "not converged: {}", self.0)
    }
}

impl std::error::Error for NotConverged {}

pub fn input_error(msg: impl Into<String>) -> CvaError {
    CvaError::InvalidInput(msg.into())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NotConverged>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<CvaError>() {
            return match e {
                CvaError::Numerical(_) => 3,
                CvaError::Job { .. } => 4,
                _ => 2,
            };
        }
    }
    2
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::CalibrateMatrix(args) => calibrate::run(&args),
        Command::GenScenarios(a) => pipeline::gen_scenarios(&config::RunConfig::load(&a.config, &a.overrides)?),
        Command::Value(a) => pipeline::value(&config::RunConfig::load(&a.config, &a.overrides)?),
        Command::Aggregate(a) => pipeline::aggregate(&config::RunConfig::load(&a.config, &a.overrides)?),
        Command::Run(a) => pipeline::run(&config::RunConfig::load(&a.config, &a.overrides)?),
        Command::Greeks {
            base,
            netting_set,
            spread_bump,
            curve_shift,
            vol_shift,
            central,
        } => {
            let loaded = config::RunConfig::load(&base.config, &base.overrides)?;
            pipeline::greeks(
                &loaded,
                netting_set.as_deref(),
                spread_bump,
                curve_shift,
                vol_shift,
                central,
            )
        }
        Command::Incremental {
            base,
            deal,
            netting_set,
            counterparty,
            self_entity,
        } => {
            let loaded = config::RunConfig::load(&base.config, &base.overrides)?;
            let parties = counterparty.zip(self_entity);
            pipeline::incremental(&loaded, &deal, &netting_set, parties)
        }
        Command::Wrongway {
            base,
            netting_set,
            correlations,
        } => {
            let loaded = config::RunConfig::load(&base.config, &base.overrides)?;
            pipeline::wrongway(&loaded, netting_set.as_deref(), &correlations)
        }
        Command::Boundary {
            base,
            deal,
            rates,
            recovery,
        } => {
            let loaded = config::RunConfig::load(&base.config, &base.overrides)?;
            pipeline::boundary(&loaded, &deal, &rates, recovery)
        }
        Command::Worker { manifest, dir, jobs } => pipeline::worker(&manifest, &dir, &jobs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

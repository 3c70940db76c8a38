//! Experiment runner for the EVSE reservation auction.
//!
//! Each subcommand is a plain function over an argument struct so it can be
//! driven from tests as well as from the `evse` binary.

pub mod commands;
pub mod output;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use evse_auction::options::OptionPolicy;
use evse_auction::pricing::PricingMode;

pub use commands::{cmd_compare, cmd_gen_scenario, cmd_simulate, cmd_validate_dapr};
pub use report::RunReport;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] evse_auction::Error),
    #[error("{0}")]
    Usage(String),
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("DAPR violated: minimum slack {min_slack:e} on {curve}")]
    DaprViolated { min_slack: f64, curve: String },
}

impl CliError {
    /// 2 for invalid inputs, 3 when the exact oracle exceeds its budget,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use evse_auction::Error as E;
        match self {
            CliError::Core(E::BudgetExceeded { .. }) => 3,
            CliError::Core(E::Io { .. }) => 1,
            CliError::Core(_) | CliError::Usage(_) => 2,
            CliError::DaprViolated { .. } => 1,
            CliError::Output { .. } | CliError::Csv { .. } => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "evse",
    version,
    about = "Online EVSE reservation auction experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the online mechanism and write its ledger.
    Simulate(SimulateArgs),
    /// Run online, no-mechanism baseline and offline reference side by side.
    Compare(CompareArgs),
    /// Check the allocation-payment inequality on every price curve.
    ValidateDapr(DaprArgs),
    /// Write a preset scenario and its users.
    GenScenario(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Use a built-in preset instead of a scenario file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Users file, one JSON record per line.
    #[arg(long, conflicts_with = "users_spec")]
    pub users: Option<PathBuf>,
    /// Population spec JSON; users are generated with `--seed`.
    #[arg(long)]
    pub users_spec: Option<PathBuf>,
    /// Grid price CSV applied to every pool.
    #[arg(long)]
    pub price_trace: Option<PathBuf>,
    /// Solar CSV applied to every pool.
    #[arg(long)]
    pub solar_trace: Option<PathBuf>,
    /// Forecast band used when the solar CSV has no lower/upper columns.
    #[arg(long, default_value_t = 0.2)]
    pub band_fraction: f64,
    /// Derive value bounds from the users instead of the scenario file.
    #[arg(long)]
    pub derive_bounds: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl InputArgs {
    pub fn preset(name: &str) -> Self {
        InputArgs {
            scenario: None,
            preset: Some(name.to_string()),
            users: None,
            users_spec: None,
            price_trace: None,
            solar_trace: None,
            band_fraction: 0.2,
            derive_bounds: false,
            seed: 0,
        }
    }

    pub fn files(scenario: PathBuf, users: PathBuf) -> Self {
        InputArgs {
            scenario: Some(scenario),
            preset: None,
            users: Some(users),
            ..InputArgs::preset("")
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = PricingMode::Exact)]
    pub mode: PricingMode,
    #[arg(long, default_value = "exhaustive", value_parser = parse_policy)]
    pub policy: OptionPolicy,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = PricingMode::Exact)]
    pub mode: PricingMode,
    #[arg(long, default_value = "exhaustive", value_parser = parse_policy)]
    pub policy: OptionPolicy,
    /// Largest unpruned search tree, in leaves, the exact oracle attempts.
    #[arg(long, default_value_t = 1e7)]
    pub oracle_budget: f64,
    /// Disable branch-and-bound pruning in the exact oracle.
    #[arg(long)]
    pub no_prune: bool,
    /// Fail with exit code 3 instead of falling back to the upper bound.
    #[arg(long)]
    pub require_exact: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DaprArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = PricingMode::Exact)]
    pub mode: PricingMode,
    /// Value bounds JSON overriding the scenario's bounds.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub grid_points: usize,
    /// Multiplies every α before checking.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_factor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub preset: String,
    /// `key=value` override, e.g. `evse_count.1=10` or `users=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_policy(s: &str) -> Result<OptionPolicy, String> {
    s.parse()
}

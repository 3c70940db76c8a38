use std::process::ExitCode;

use clap::Parser;
use evse_cli::{
    cmd_compare, cmd_gen_scenario, cmd_simulate, cmd_validate_dapr, Cli, CliError, Command,
};

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let r = cmd_simulate(&args)?;
            println!(
                "welfare {} revenue {} cost {} utility {} accepted {}/{}",
                r.online.welfare,
                r.online.revenue,
                r.online.operational_cost,
                r.online.total_utility,
                r.online.accepted,
                r.users
            );
        }
        Command::Compare(args) => {
            let r = cmd_compare(&args)?;
            let baseline = r.baseline.as_ref().map_or(0.0, |b| b.welfare);
            let (kind, offline) = r.offline.as_ref().map_or(("none", 0.0), |o| {
                let kind = match o.kind {
                    evse_cli::report::OfflineKind::Exact => "exact",
                    evse_cli::report::OfflineKind::UpperBound => "upper bound",
                };
                (kind, o.welfare)
            });
            println!(
                "online {} baseline {baseline} offline ({kind}) {offline}",
                r.online.welfare
            );
            if let Some(ratio) = r.empirical_ratio {
                println!("empirical ratio {ratio}");
            }
        }
        Command::ValidateDapr(args) => {
            let verdict = cmd_validate_dapr(&args)?;
            println!("{verdict}");
        }
        Command::GenScenario(args) => {
            let (scenario, users) = cmd_gen_scenario(&args)?;
            println!("wrote {} and {}", scenario.display(), users.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(evse_auction::Error::Validation(violations)) = &e {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

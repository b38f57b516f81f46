//! Operator entry points: one binary with a subcommand per service.

pub mod args;
pub mod commands;
pub mod error;
pub mod loadtest;

pub use args::{Cli, Command};
pub use error::{CliError, EXIT_RUNTIME, EXIT_USAGE};
pub use loadtest::{run_loadtest, LatencySummary, LoadReport, LoadtestConfig};

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Broker(a) => commands::broker(a).await,
        Command::Publish(a) => commands::publish(a).await,
        Command::Subscribe(a) => commands::subscribe(a).await,
        Command::Simulate(a) => commands::simulate(a).await,
        Command::Aggregate(a) => commands::aggregate(a).await,
        Command::Loadtest(a) => commands::loadtest(a).await,
    }
}

mod commands;
mod error;
mod input;
mod metrics;
mod options;
mod output;

use clap::Parser;

use crate::error::CliError;
use crate::options::{Cli, Command};

fn run(cli: Cli) -> Result<(), CliError> {
    let mut opts = cli.opts;
    opts.merge_config()?;
    opts.validate()?;
    match cli.command {
        Command::Fit => commands::fit(&opts),
        Command::Predict => commands::predict(&opts),
        Command::Diagnose => commands::diagnose(&opts),
        Command::Simulate => commands::simulate(&opts),
        Command::Rank => commands::rank(&opts),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("plcopula: {e}");
        std::process::exit(e.exit_code());
    }
}

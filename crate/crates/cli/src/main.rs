mod cli;
mod commands;
mod config;
mod failure;
mod manifest;

use clap::error::ErrorKind;
use clap::Parser;
use tracing_subscriber::EnvFilter;

use crate::cli::Cli;
use crate::failure::Failure;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => Failure::Usage(String::new()).exit_code(),
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = config::load(&cli.global).and_then(|config| commands::run(cli.command, &cli.global, &config));
    if let Err(failure) = result {
        eprintln!("{failure}");
        std::process::exit(failure.exit_code());
    }
}

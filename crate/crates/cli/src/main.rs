use std::process::ExitCode;

use brenier_cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}

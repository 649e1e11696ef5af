//! Command-line driver: bounds, transport maps, verification runs and sweeps
//! from TOML scenario files.

// NaN-rejecting guards are written `!(x > y)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use brenier_bounds::Error;
use clap::{ArgAction, Args, Parser, Subcommand};

pub use config::Format;

/// Exit statuses; a stable contract for scripts.
pub mod exit {
    pub const PASS: u8 = 0;
    pub const INPUT: u8 = 1;
    pub const SOLVER: u8 = 2;
    pub const VERIFY: u8 = 3;
}

#[derive(Debug, Parser)]
#[command(
    name = "brenier-bounds",
    version,
    about = "Lipschitz bounds for Brenier maps and their empirical verification"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scenario file, or a directory of `*.toml` files.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `[output].dir`. Defaults to `out`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Output formats; overrides `[output].format`. Defaults to both.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for scenario runs.
    #[arg(long, global = true, env = "BRENIER_BOUNDS_JOBS")]
    pub jobs: Option<usize>,
    /// Reject unknown configuration keys.
    #[arg(long, global = true, action = ArgAction::Set, default_value_t = true, value_name = "BOOL")]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Every applicable bound for each scenario.
    Bounds,
    /// Monotone transport map and its empirical Lipschitz constant.
    Transport,
    /// Bounds against the empirical map, plus any sweeps in the config.
    Verify,
    /// Uniformity and limit sweeps.
    Sweep,
}

/// Exit status for an error: core solver failures map to 2, everything
/// else (configuration, I/O, invalid parameters) to 1.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain().find_map(|c| c.downcast_ref::<Error>()).map(core_exit_code).unwrap_or(exit::INPUT)
}

pub fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_)
        | Error::InvalidOrder { .. }
        | Error::Domain(_)
        | Error::Io { .. }
        | Error::DivergentIntegral(_) => exit::INPUT,
        Error::VoidBound(_)
        | Error::NoConvergence(_)
        | Error::BracketFailure(_)
        | Error::Quadrature(_)
        | Error::MFrakOverflow(_)
        | Error::ConventionUndefined(_)
        | Error::EmptyWindow(_) => exit::SOLVER,
    }
}

/// Runs a parsed command line and returns the exit status. Diagnostics go
/// to standard error.
pub fn run(cli: Cli) -> u8 {
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_global_flags_after_subcommand() {
        let cli =
            Cli::try_parse_from(["brenier-bounds", "verify", "--config", "a.toml", "--strict", "false", "--jobs", "3"])
                .unwrap();
        assert!(matches!(cli.command, Command::Verify));
        assert!(!cli.global.strict);
        assert_eq!(cli.global.jobs, Some(3));
    }

    #[test]
    fn errors_map_to_stable_codes() {
        let e = anyhow::Error::new(Error::VoidBound("x".into())).context("scenario");
        assert_eq!(exit_code(&e), exit::SOLVER);
        let e = anyhow::Error::new(Error::InvalidOrder { d: "3".into(), big_d: "2".into() });
        assert_eq!(exit_code(&e), exit::INPUT);
        assert_eq!(exit_code(&anyhow::anyhow!("bad key")), exit::INPUT);
    }
}

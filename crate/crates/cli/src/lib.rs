//! Command-line driver: configuration, the five subcommands, and the
//! self-check suite.

pub mod commands;
pub mod config;
pub mod stats;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// A check or tolerance was not met (exit 1).
    Assertion(String),
    /// Bad configuration or input (exit 2).
    Config(String),
    /// A solver failed or a rollout diverged (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    /// Any library error raised while building the problem counts as bad input.
    pub fn config(e: rclqr::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Assertion(m) => write!(f, "assertion failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rclqr::Error> for CliError {
    fn from(e: rclqr::Error) -> Self {
        use rclqr::Error as E;
        match e.root() {
            E::Config(_) | E::Dimension { .. } | E::Precondition(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rclqr",
    version,
    about = "Risk-constrained LQR: exact solves, model-free learning and checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; the UAV benchmark when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed count (`20`), list (`1,4,9`) or range (`10..20`).
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Worker threads for seed sweeps.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Exact inner solver for primal-dual.
    #[arg(long, global = true, conflicts_with = "model_free")]
    pub exact: bool,
    /// Random-search inner solver for primal-dual.
    #[arg(long = "model-free", global = true)]
    pub model_free: bool,
    /// Record wall-clock times in iterate logs (reruns then differ in that column).
    #[arg(long, global = true)]
    pub wallclock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Oracle-equivalence checks on the configured system; no optimizer runs.
    Check,
    /// Exact primal-dual solve: optimal policy, multiplier and duality gap.
    SolveExact,
    /// Model-free random search at a fixed multiplier, one run per seed.
    Learn,
    /// Primal-dual learning, one run per seed.
    PrimalDual,
    /// Closed-loop rollouts compared with the closed-form costs.
    Simulate,
}

/// Parses `--seeds`: a count, a comma list, or a half-open range.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("cannot parse seeds {spec:?}"));
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi <= lo {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    if spec.contains(',') {
        return spec
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect();
    }
    let count: u64 = spec.parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(bad());
    }
    Ok((0..count).collect())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    commands::dispatch(cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 9,1").unwrap(), vec![4, 9, 1]);
        assert_eq!(parse_seeds("10..13").unwrap(), vec![10, 11, 12]);
        assert!(parse_seeds("0").is_err());
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(
            CliError::from(rclqr::Error::Config("x".into())).exit_code(),
            2
        );
        assert_eq!(
            CliError::from(rclqr::Error::Unstable { radius: 1.2 }).exit_code(),
            3
        );
        assert_eq!(CliError::Assertion("x".into()).exit_code(), 1);
    }
}

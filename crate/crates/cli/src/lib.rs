//! Command-line front end: TOML scenario configs in, trace CSVs and report
//! documents out.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use toml::{Table, Value};

pub use config::ScenarioConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "sdde",
    version,
    about = "Simulate and verify stochastic time-delay control scenarios"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML scenario file; omitted means all defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a config value by dotted path, e.g. `params.noise_scale=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Seed of the first path (`seed_base`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub paths: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one closed-loop path and write `trace.csv`.
    Simulate,
    /// Monte Carlo safety estimate and boundary check; writes `report.txt`,
    /// `report.json` and `minima.csv`.
    Verify,
    /// Pointwise controller identities on sampled buffers.
    Identities,
    /// `verify` for every member of a preset family plus `summary.csv`.
    Sweep,
}

impl Cli {
    fn document(&self) -> CliResult<Table> {
        let Some(path) = &self.config else {
            return Ok(Table::new());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::parse(path.display().to_string(), e.message().trim().to_string()))
    }

    /// `--set` values in order, then the dedicated flags.
    fn overrides(&self) -> CliResult<Vec<(String, Value)>> {
        let mut out = self
            .overrides
            .iter()
            .map(|s| config::parse_override(s))
            .collect::<CliResult<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            let seed =
                i64::try_from(seed).map_err(|_| CliError::parse("--seed", "TOML integers are limited to 2^63 - 1"))?;
            out.push(("seed_base".into(), Value::Integer(seed)));
        }
        if let Some(paths) = self.paths {
            let paths = i64::try_from(paths).map_err(|_| CliError::parse("--paths", "too large"))?;
            out.push(("paths".into(), Value::Integer(paths)));
        }
        if let Some(dir) = &self.out {
            out.push(("out".into(), Value::String(dir.display().to_string())));
        }
        Ok(out)
    }
}

/// Resolves the configuration and runs the command, returning the files written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let document = cli.document()?;
    let overrides = cli.overrides()?;
    let cfg = ScenarioConfig::resolve(document.clone(), &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate_command(&cfg),
        Command::Verify => commands::verify_command(&cfg),
        Command::Identities => commands::identities_command(&cfg),
        Command::Sweep => commands::sweep_command(&document, &overrides, &cfg),
    }
}

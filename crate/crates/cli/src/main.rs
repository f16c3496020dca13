mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ghp_core::config::{bundled, Config};

/// Multi-zone floor heating with a geothermal heat pump: simulate, solve and check.
#[derive(Parser)]
#[command(name = "ghp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Scenario file (TOML). Bundled names such as `s5-scenario1.cfg` also work.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set controller.variant=decentralized`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Integration step in seconds (same as `--set simulation.dt=...`).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Horizon in hours (same as `--set simulation.horizon_h=...`).
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write the trace CSV and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run through the message-passing agents instead of the monolithic loop.
        #[arg(long)]
        agents: bool,
    },
    /// Solve the steady-state problem in force at one instant.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Instant in hours (default: end of the horizon).
        #[arg(long)]
        at_time: Option<f64>,
    },
    /// Stability, convexity and closed-loop optimality checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Random points for the convexity checks.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run several variants on the same grid and compare them with the first.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list; each entry joins modifiers with `+`:
        /// full, decentralized, reduced-comm, extra, no-extra.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        variants: Vec<String>,
    },
}

/// Why a command failed; selects the exit code.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<ghp_core::Error> for Failure {
    fn from(e: ghp_core::Error) -> Self {
        use ghp_core::Error as E;
        match e {
            E::Config(_) | E::InvalidParameter { .. } | E::Structure(_) => Failure::Config(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// A loaded config with the overrides that produced it.
pub struct Loaded {
    pub config: Config,
    pub source: String,
    pub overrides: Vec<String>,
}

impl Common {
    pub fn load(&self) -> CmdResult<Loaded> {
        let text = match std::fs::read_to_string(&self.config) {
            Ok(t) => t,
            Err(e) => match bundled(&self.config.to_string_lossy()) {
                Some(t) if !self.config.exists() => t.to_string(),
                _ => return Err(Failure::Config(format!("cannot read {}: {e}", self.config.display()))),
            },
        };
        let mut overrides = self.set.clone();
        if let Some(dt) = self.dt {
            overrides.push(format!("simulation.dt={dt:?}"));
        }
        if let Some(h) = self.horizon {
            overrides.push(format!("simulation.horizon_h={h:?}"));
        }
        let config = Config::load(&text, &overrides)?;
        Ok(Loaded { config, source: self.config.display().to_string(), overrides })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Simulate { common, agents } => commands::simulate(&common, agents),
        Command::Solve { common, at_time } => commands::solve(&common, at_time),
        Command::Verify { common, samples, seed } => commands::verify(&common, samples, seed),
        Command::Compare { common, variants } => commands::compare(&common, &variants),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Check(m) | Failure::Config(m) | Failure::Numeric(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

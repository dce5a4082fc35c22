//! `eigp` command-line driver.
//!
//! Failures are reported on stderr as `{"error":{"kind":..,"message":..}}` with exit code 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eigp::aggregation::Method;
use eigp::io::{compare_runs, render_table, run_experiment, write_toy, ExperimentConfig, RunOptions};
use eigp::sim::{generate_toy, ToySpec};
use eigp::{Error, Result};

const DEFAULT_OUT: &str = "eigp-out";

#[derive(Parser)]
#[command(name = "eigp", version, about = "Error-informed GP aggregation for multi-agent systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, summary.json and (toy) plot.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// geigp, aeigp, aeigp-linpoe, moe, poe, gpoe, bcm or rbcm.
        #[arg(long)]
        method: Option<String>,
        /// aEIGP selection tolerance; defaults to the config's value, else 1.
        #[arg(long)]
        theta: Option<f64>,
        /// aEIGP error/variance trade-off; defaults to the config's value, else 1.
        #[arg(long)]
        nu: Option<f64>,
        /// Output directory. Falls back to $EIGP_OUT_DIR, then the config, then ./eigp-out.
        #[arg(long, env = "EIGP_OUT_DIR")]
        out: Option<PathBuf>,
        /// Zero all timing columns so repeated runs are byte-identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Tabulate completed runs of the same scenario.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Emit JSON rows instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write the four-agent toy data set as CSV files.
    GenToy {
        #[arg(long, env = "EIGP_OUT_DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        agents: usize,
    },
    /// Parse and range-check a config, printing its normalized JSON form.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, method, theta, nu, out, no_timing } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if method.is_some() || theta.is_some() || nu.is_some() {
                cfg.method = override_method(&cfg.method, method.as_deref(), theta, nu)?;
            }
            cfg.validate()?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let summary = run_experiment(&cfg, &dir, RunOptions { no_timing })?;
            println!("{}", to_json(&serde_json::json!({ "output_dir": dir, "summary": summary.stats }))?);
            Ok(())
        }
        Command::Compare { runs, json } => {
            let rows = compare_runs(&runs)?;
            if json {
                println!("{}", to_json(&rows)?);
            } else {
                print!("{}", render_table(&rows));
            }
            Ok(())
        }
        Command::GenToy { out, seed, agents } => {
            let dir = out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let spec = ToySpec::default();
            let data = generate_toy(&spec, agents, seed)?;
            for path in write_toy(&dir, &spec, &data)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(Path::new(&config))?;
            println!("{}", cfg.to_json()?);
            Ok(())
        }
    }
}

/// Applies `--method`, `--theta` and `--nu`; θ and ν default to the config's values.
fn override_method(current: &Method, name: Option<&str>, theta: Option<f64>, nu: Option<f64>) -> Result<Method> {
    let (theta0, nu0) = match *current {
        Method::Aeigp { theta, nu, .. } => (theta, nu),
        _ => (1.0, 1.0),
    };
    let method = match name {
        Some(name) => Method::from_name(name, theta.unwrap_or(theta0), nu.unwrap_or(nu0))?,
        None => *current,
    };
    match method {
        Method::Aeigp { tradeoff, .. } => {
            let m = Method::Aeigp { theta: theta.unwrap_or(theta0), nu: nu.unwrap_or(nu0), tradeoff };
            m.validate()?;
            Ok(m)
        }
        other if theta.is_some() || nu.is_some() => Err(Error::Config(format!(
            "--theta and --nu only apply to aeigp, not {}",
            other.label()
        ))),
        other => Ok(other),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))
}

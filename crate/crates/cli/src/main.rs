//! Command-line surface of the cocycle laboratory: analysis, segment
//! perturbation, global conformalization, and the invariant suite.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cocyclelab",
    about = "Quasiconformal distortion of linear cocycles over minimal rotations: \
             estimates, dominated splittings, and conformalizing perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate K/Z, the Lyapunov spectrum, the semi-uniform ergodic pair and
    /// the dominated splitting; write analysis.json and sigma_graph.csv.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output`, then `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the segment perturbation at an anchor; write plan.json and a
    /// human-readable summary.
    Perturb {
        #[arg(long)]
        config: PathBuf,
        /// Anchor point on the circle (first coordinate for torus bases).
        #[arg(long)]
        anchor: f64,
        /// Segment length (defaults to the config's horizon n).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterate the global perturbation; write blended_<r>.json per round and
    /// decay.csv.
    Conformalize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every module's invariant suite; write verify.json.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let code = reason_code(&e);
            eprintln!(
                "{}",
                serde_json::json!({"error": code, "message": format!("{e:#}")})
            );
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Analyze { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = commands::out_dir(Some(&cfg), out.as_deref());
            commands::cmd_analyze(&cfg, &dir)?;
            Ok(true)
        }
        Command::Perturb {
            config,
            anchor,
            n,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dir = commands::out_dir(Some(&cfg), out.as_deref());
            commands::cmd_perturb(&cfg, anchor, n, &dir)?;
            Ok(true)
        }
        Command::Conformalize {
            config,
            rounds,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dir = commands::out_dir(Some(&cfg), out.as_deref());
            commands::cmd_conformalize(&cfg, rounds, &dir)?;
            Ok(true)
        }
        Command::Verify { seed, out } => {
            let dir = commands::out_dir(None, out.as_deref());
            commands::cmd_verify(seed, &dir)
        }
    }
}

fn reason_code(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<cocyclelab::Error>() {
        Some(err) => err.reason_code(),
        None => "cli_error",
    }
}

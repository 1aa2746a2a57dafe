use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadnls::cli::{is_config_error, run, Command};
use quadnls::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "quadnls",
    version,
    about = "Ground states and blow-up dichotomy for a quadratic NLS system"
)]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config leaf, e.g. `--set grid.n=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Output directory (overrides output.directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve for the ground state and report alpha1, C_op and residuals.
    GroundState,
    /// Evolve the configured initial data.
    Evolve,
    /// Classify and simulate the configured experiment (n = 5).
    Dichotomy,
    /// Run the invariant suite.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let mut cfg = match RunConfig::load(args.config.as_deref(), &args.sets) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = args.out {
        cfg.output.directory = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let command = match args.command {
        Cmd::GroundState => Command::GroundState,
        Cmd::Evolve => Command::Evolve,
        Cmd::Dichotomy => Command::Dichotomy,
        Cmd::Verify => Command::Verify,
    };
    match run(command, &cfg) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            for line in &outcome.lines {
                // A closed pipe is not a run failure.
                if writeln!(stdout, "{line}").is_err() {
                    break;
                }
            }
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed: {}", outcome.failures.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use concavify_cli::{run, Command, RunOptions};

/// Non-concave utility maximization by concavification.
#[derive(Parser)]
#[command(name = "concavify", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Problem configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CONCAVIFY_OUT_DIR", default_value = "concavify-out")]
    out: PathBuf,
    /// Named tolerance profile: default, strict or loose.
    #[arg(long, global = true)]
    tolerance_profile: Option<String>,
    /// Seed for randomized demos; fills in a missing utility or market.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Concave envelope vertices and components.
    Envelope,
    /// Convex conjugate of the envelope.
    Conjugate,
    /// Extended asymptotic elasticity estimate.
    Eae,
    /// Growth condition and envelope domination checks.
    EnvelopeCheck,
    /// Solve at one wealth level.
    Solve,
    /// Primal and dual value curves.
    Curves,
    /// Check a consistent price system on an event tree.
    CpsCheck,
    /// Liquidation values, self-financing and admissibility.
    Liquidate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Envelope => Command::Envelope,
            Cmd::Conjugate => Command::Conjugate,
            Cmd::Eae => Command::Eae,
            Cmd::EnvelopeCheck => Command::EnvelopeCheck,
            Cmd::Solve => Command::Solve,
            Cmd::Curves => Command::Curves,
            Cmd::CpsCheck => Command::CpsCheck,
            Cmd::Liquidate => Command::Liquidate,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    let opts = RunOptions { config, out: cli.out, tolerance_profile: cli.tolerance_profile, seed: cli.seed };
    let command = Command::from(cli.command);
    match std::panic::catch_unwind(|| run(command, &opts)) {
        Ok(Ok(outcome)) => {
            println!("{}: {}", command.name(), outcome.summary);
            for f in outcome.files {
                println!("  {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal failure while running {}", command.name());
            ExitCode::from(1)
        }
    }
}

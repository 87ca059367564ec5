use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use symcast_cli::{cmd_evaluate, cmd_importance, cmd_sweep, cmd_synth, cmd_train, GlobalOpts};

#[derive(Parser)]
#[command(name = "symcast", version, about = "Predict daily case counts from survey signals")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single seed replacing the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Clamp predictions at zero before scoring.
    #[arg(long, global = true)]
    clamp_nonneg: bool,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic survey/cases dataset and its ground truth.
    Synth,
    /// Train the configured suite.
    Train,
    /// Error reports for a trained suite.
    Evaluate {
        suite: PathBuf,
        /// Second suite for the side-by-side table.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// MAE against the number of top-ranked features.
    Sweep {
        /// Comma-separated feature counts, ascending.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Per-state importance lists and top-k frequency table.
    Importance {
        suite: PathBuf,
        #[arg(long = "top", value_delimiter = ',', default_values_t = [5, 15])]
        top: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let opts = GlobalOpts {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        clamp_nonneg: cli.clamp_nonneg,
    };
    let result = match &cli.command {
        Command::Synth => cmd_synth(&opts),
        Command::Train => cmd_train(&opts),
        Command::Evaluate { suite, compare } => cmd_evaluate(suite, compare.as_deref(), opts.out.as_deref()),
        Command::Sweep { ks } => cmd_sweep(&opts, ks.as_deref()),
        Command::Importance { suite, top } => cmd_importance(suite, top, opts.out.as_deref()),
    };
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                for line in outcome.lines {
                    println!("{line}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

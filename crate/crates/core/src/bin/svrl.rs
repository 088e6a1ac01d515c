use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use selfverify::acceptance::{run_suite, AcceptanceOptions};
use selfverify::cli;

#[derive(Parser)]
#[command(name = "svrl", version, about = "GRPO training with self-verification on synthetic arithmetic")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; the run directory lands under $SVRL_RUN_ROOT (default ./runs).
    Train {
        /// TOML config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` overrides, dotted for nested tables (e.g. clip.eps_high=0.3).
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and write the metrics as CSV.
    Eval {
        checkpoint: PathBuf,
        /// Config whose [eval] section and seed replace the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Merge the eval curves of several runs into one table.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Acceptance {
        /// Normalization constant used by the advantage checks.
        #[arg(long)]
        eps_norm: Option<f64>,
        /// Restrict to these criterion numbers.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> selfverify::Result<ExitCode> {
    match args.command {
        Command::Train { config, overrides } => {
            let dir = cli::cmd_train(config.as_deref(), &overrides)?;
            println!("{}", dir.display());
        }
        Command::Eval { checkpoint, config, out } => {
            for row in cli::cmd_eval(&checkpoint, config.as_deref(), &out)? {
                println!("{:<24} k={:<3} {:.4}", row.metric, row.k, row.value);
            }
        }
        Command::Compare { runs, out } => {
            print!("{}", cli::cmd_compare(&runs, out.as_deref())?);
        }
        Command::Acceptance { eps_norm, only } => {
            let mut options = AcceptanceOptions::default();
            if let Some(eps) = eps_norm {
                options.eps_norm = eps;
            }
            if !only.is_empty() {
                options.only = Some(only.into_iter().collect::<BTreeSet<_>>());
            }
            let report = run_suite(&options, |r| println!("{r}"));
            println!("total {:.1}s", report.total_seconds);
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

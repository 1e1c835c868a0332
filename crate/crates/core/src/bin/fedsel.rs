//! `fedsel` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsel::cli::{self, Overrides};

#[derive(Parser)]
#[command(name = "fedsel", version, about = "Bandit-driven participant selection for federated recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OverrideArgs {
    /// Selection policy (ucb, ucb_discounted, ucb_window, random, cluster, greedy_oracle).
    #[arg(long)]
    policy: Option<String>,
    /// Target user balance index of the partition.
    #[arg(long)]
    ubi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Clients selected per round.
    #[arg(long)]
    k: Option<usize>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            policy: a.policy,
            ubi: a.ubi,
            seed: a.seed,
            rounds: a.rounds,
            k: a.k,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; artifacts go to <out>/<config-hash>/.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Artifact root (default: $FEDSEL_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a policy × partition × seed matrix and write comparison.csv.
    Compare {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot test AUC against simulated time for one or more trace.csv files.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, short, default_value = "auc.svg")]
        output: PathBuf,
    },
    /// Emit per-client user/interaction counts and the realized UBI.
    PartitionReport {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// CSV destination (stdout when absent).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run { config, overrides, out } => cli::cmd_run(&config, &overrides.into(), out.as_deref()).map(|a| {
            let s = &a.output.summary;
            println!(
                "{}: {} rounds, AUC {:.4}, NDCG@50 {:.4}, Recall@50 {:.4}, simulated {:.1} s, time-to-target {}",
                a.dir.display(),
                s.rounds_run,
                s.final_metrics.auc,
                s.final_metrics.ndcg,
                s.final_metrics.recall,
                s.total_time,
                s.time_to_target.map_or("n/a".into(), |t| format!("{t:.1} s"))
            );
        }),
        Command::Compare { matrix, out } => cli::cmd_compare(&matrix, out.as_deref()).map(|(p, rows)| {
            println!("{} rows written to {}", rows.len(), p.display());
        }),
        Command::Plot { traces, output } => cli::cmd_plot(&traces, &output).map(|()| println!("wrote {}", output.display())),
        Command::PartitionReport { config, overrides, output } => {
            cli::cmd_partition_report(&config, &overrides.into(), output.as_deref()).map(|r| {
                if output.is_none() {
                    print!("{r}");
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

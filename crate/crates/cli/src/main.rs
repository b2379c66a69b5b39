use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safebac_cli::{replay, run, CliError, ReplayReport, RunOptions};

#[derive(Debug, Parser)]
#[command(
    name = "safebac",
    version,
    about = "Run and replay safe actor-critic experiments"
)]
struct Cli {
    /// Number of seeds, overriding the config.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Output directory, overriding the config and SAFEBAC_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate every seed of an experiment config.
    Run { config: PathBuf },
    /// Recompute statistics from an episode CSV or a run directory.
    Replay { target: PathBuf },
}

fn print_replay(report: &ReplayReport) {
    match report {
        ReplayReport::Episode(e) => {
            let s = &e.stats;
            println!(
                "{}: violated={} control_violations={} J_total={} J_e={} convergence_step={} matches_summary={}",
                e.file.display(),
                s.violated,
                s.control_violations,
                s.j_total,
                s.j_e,
                s.convergence_step.map_or("none".to_string(), |k| k.to_string()),
                e.matches()
            );
        }
        ReplayReport::Run(batches) => {
            for b in batches {
                let m = &b.metrics;
                println!(
                    "eps_w={} episodes={} safety_rate={} J_mean={} J_std={} matches_summary={}",
                    b.eps_w,
                    m.episodes,
                    m.safety_rate,
                    m.j_total_mean,
                    m.j_total_std,
                    b.metrics == b.stored
                );
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result: Result<(), CliError> = match &cli.command {
        Command::Run { config } => {
            let opts = RunOptions {
                seeds: cli.seeds,
                out: cli.out.clone(),
                quiet: cli.quiet,
            };
            run(config, &opts).map(|_| ())
        }
        Command::Replay { target } => replay(target).map(|r| {
            if !cli.quiet {
                print_replay(&r);
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlcontrol_cli::{execute, Command, Options};

/// Solve, optimize and study local and nonlocal traffic-flow models.
#[derive(Parser)]
#[command(name = "nlcontrol", version)]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the scheme and write the trajectory.
    Solve(Common),
    /// Recover an initial datum by minimizing the configured objective.
    Optimize(Common),
    /// Run one of the convergence experiments.
    Study(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; more than one evaluates gradients in parallel.
    #[arg(long)]
    parallel: Option<usize>,
    /// Keep every k-th state of a solve (overrides the config).
    #[arg(long)]
    store_every: Option<usize>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Verb::Solve(c) => (Command::Solve, c),
        Verb::Optimize(c) => (Command::Optimize, c),
        Verb::Study(c) => (Command::Study, c),
    };
    let level = if common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = common.parallel.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let opts = Options {
        config: common.config,
        out: common.out,
        parallel: common.parallel,
        store_every: common.store_every,
    };
    match execute(command, &opts) {
        Ok(outcome) => {
            if !common.quiet {
                println!("{}", outcome.manifest_path.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("nlcontrol: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

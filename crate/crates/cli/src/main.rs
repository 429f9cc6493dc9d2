use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod catalog;
mod config;
mod output;
mod run;

use config::ExperimentConfig;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Exact and Monte Carlo duality experiments for interacting particle systems.
#[derive(Parser)]
#[command(name = "dualbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for Monte Carlo (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_name = "DIR", env = "DUALBENCH_OUT", default_value = "dualbench-out")]
        out: PathBuf,
    },
    /// List model kinds, their defining rates and supported experiments.
    Catalog,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Catalog => {
            print!("{}", catalog::catalog());
            ExitCode::SUCCESS
        }
        Command::Run { config, seed, threads, out } => run_command(config, seed, threads, out),
    }
}

fn run_command(config: PathBuf, seed: Option<u64>, threads: Option<usize>, out: PathBuf) -> ExitCode {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let plan = match ExperimentConfig::load(&config).and_then(|c| c.plan(seed)) {
        Ok(plan) => plan,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    log::info!("running {} on {}", plan.run.experiment, plan.model.kind);
    let outcome = match run::execute(&plan) {
        Ok(outcome) => outcome,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let timestamp = chrono::Local::now().to_rfc3339();
    let written = match output::write_all(&out, &plan, &outcome, &config, &timestamp) {
        Ok(paths) => paths,
        Err(e) => {
            eprintln!("error: cannot write to {}: {e}", out.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    print!("{}", output::report(&plan, &outcome, &config, &timestamp));
    for path in written {
        log::info!("wrote {}", path.display());
    }
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        for r in outcome.failures() {
            eprintln!("check failed: {} [{}] = {}", r.identity, r.sector, r.residual);
        }
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

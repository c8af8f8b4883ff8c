use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pbrwp_core::experiment::{self, RunConfig, RunFailure};
use pbrwp_core::plot::metrics_svg;
use pbrwp_core::verify::{format_table, mutated_prwpo, run_suite, OracleFns};

/// Particle sampler experiment runner.
#[derive(Parser)]
#[command(name = "sampler", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sampler from a TOML config, writing snapshots, metrics.csv and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides [output] dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides [sampler] seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the closed-form property suite and print a pass/fail table.
    Verify {
        /// Swap in a deliberately wrong proximal formula.
        #[arg(long, hide = true)]
        mutate: bool,
    },
    /// Plot a metrics.csv as SVG.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Thread cap from `SAMPLER_THREADS`; unset means all cores.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SAMPLER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("SAMPLER_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    // an unreadable config file counts as a config error
    let result = RunConfig::from_path(&config)
        .map_err(RunFailure::Config)
        .and_then(|cfg| experiment::run(&cfg, out.as_deref(), seed));
    match result {
        Ok(outcome) => {
            println!(
                "wrote {} snapshots to {}",
                outcome.metrics.len() + 1,
                outcome.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

fn verify(mutate: bool) -> ExitCode {
    let fns = if mutate {
        OracleFns { prwpo: mutated_prwpo }
    } else {
        OracleFns::default()
    };
    let rows = run_suite(&fns);
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} checks passed", rows.len());
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} checks failed", rows.len());
        ExitCode::FAILURE
    }
}

fn plot(metrics: PathBuf, out: PathBuf) -> ExitCode {
    let rows = match experiment::read_metrics(&metrics) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let svg = metrics_svg(&rows, &metrics.display().to_string());
    if let Err(e) = std::fs::write(&out, svg) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Run { config, out, seed } => run(config, out, seed),
        Command::Verify { mutate } => verify(mutate),
        Command::Plot { metrics, out } => plot(metrics, out),
    }
}

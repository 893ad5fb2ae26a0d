use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsched::harness::{
    bounds_report, metrics_csv, run_compare, run_sweep, simulate, solve, summary_csv, sweep_taus,
    ExperimentConfig, Mode,
};
use fedsched::{Error, Result};

/// Federated-learning schedule simulator and (tau, K) optimizer.
#[derive(Debug, Parser)]
#[command(name = "fedsched", version)]
struct Cli {
    /// Experiment file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary CSV destination; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stop a run before the round that would exceed either budget.
    #[arg(long, global = true)]
    enforce_budget: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form candidate table and the integer schedule.
    Solve,
    /// One run of the configured (or solved) schedule.
    Simulate,
    /// One run per tau, each with the largest K the budgets allow.
    Sweep,
    /// Convergence-bound report on one run.
    Bounds,
    /// Solved schedule against tau=1 and tau=tau_max baselines.
    Compare,
    /// Whatever `mode` the config names.
    Run,
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("metrics");
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes the primary CSV to `--out` (with the summary beside it) or to stdout.
fn deliver(out: Option<&Path>, primary: &str, summary: &str) -> Result<()> {
    match out {
        Some(path) => {
            write(path, primary)?;
            if !summary.is_empty() {
                let sp = summary_path(path);
                write(&sp, summary)?;
                eprintln!("wrote {} and {}", path.display(), sp.display());
            } else {
                eprintln!("wrote {}", path.display());
            }
        }
        None => print!("{primary}"),
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let seed = config.seed;
    let enforce = cli.enforce_budget || config.enforce_budget;
    let out = cli.out.as_deref();

    let mode = match cli.command {
        Command::Solve => Mode::Solve,
        Command::Simulate => Mode::Simulate,
        Command::Sweep => Mode::Sweep,
        Command::Bounds => Mode::Bounds,
        Command::Compare => Mode::Compare,
        Command::Run => config.mode,
    };

    match mode {
        Mode::Solve => {
            let report = solve(&config, seed)?;
            eprint!("{}", report.table());
            deliver(out, &report.csv(), "")
        }
        Mode::Simulate => {
            let report = simulate(&config, seed, enforce)?;
            let summary = summary_csv(std::slice::from_ref(&report.summary));
            eprint!("{summary}");
            deliver(out, &metrics_csv(&report.records), &summary)
        }
        Mode::Sweep => {
            let report = run_sweep(&config, seed, &sweep_taus(&config), enforce)?;
            let summary = summary_csv(&report.summaries());
            eprint!("{summary}");
            for tau in report.infeasible() {
                eprintln!("tau={tau}: no round fits the budgets");
            }
            deliver(out, &metrics_csv(&report.records()), &summary)
        }
        Mode::Bounds => {
            let report = bounds_report(&config, seed, enforce)?;
            deliver(out, &report.csv(), "")
        }
        Mode::Compare => {
            let report = run_compare(&config, seed, enforce)?;
            let summary = summary_csv(&report.runs);
            eprint!("{summary}");
            deliver(out, &metrics_csv(&report.records), &summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

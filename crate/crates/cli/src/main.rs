use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use darboux_core::scenario::{
    generate_case, render_report, run_scenario, CaseKind, RenderFormat, RunOutputs, EXIT_ERROR,
};

/// Numerical Darboux charts for symplectic fields on towers of normed spaces.
#[derive(Debug, Parser)]
#[command(name = "darboux", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario. Exit code 0 on pass, 2 on fail, 1 on error.
    Run {
        config: PathBuf,
        /// JSON report path (overrides the config).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-sample CSV path (overrides the config).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print a reproducible scenario config to stdout.
    Generate {
        /// trivial, linear_perturbation or degenerate
        kind: CaseKind,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a report.
    Render {
        report: PathBuf,
        /// text or csv
        #[arg(long, default_value = "text")]
        format: RenderFormat,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn execute(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Run { config, report, csv } => {
            let outcome = run_scenario(&config, &RunOutputs { report, csv })
                .with_context(|| format!("running {}", config.display()))?;
            let r = &outcome.report;
            println!(
                "verdict: {} (pullback residual {:.3e}, drift {:.3e}, {} samples)",
                r.verdict,
                r.pullback.max,
                r.drift.max,
                r.samples.len()
            );
            for f in &r.failures {
                println!("  - {f}");
            }
            Ok(outcome.exit_code)
        }
        Command::Generate { kind, dim, depth, epsilon, seed } => {
            let scenario = generate_case(kind, dim, depth, epsilon, seed)?;
            println!("{}", scenario.to_json());
            Ok(0)
        }
        Command::Render { report, format } => {
            print!("{}", render_report(&report, format)?);
            Ok(0)
        }
    }
}

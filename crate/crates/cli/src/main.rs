use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdr::harness::{self, BenchGrid, SweepAxis};
use pdr::PdrError;

/// Exit status when a repeat aborted or diverged.
const NON_CONVERGENCE: u8 = 2;

#[derive(Parser)]
#[command(name = "pdr", version, about = "Projected robust aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write records.jsonl and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides PDR_SEED and the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's output_path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time projected against full-dimension aggregation over a grid.
    Bench {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Report path.
        #[arg(long, default_value = "bench_report.json")]
        out: PathBuf,
    },
    /// Run one experiment per value of an axis and write a CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of b, attack, aggregator, k, s.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, PdrError> {
    match command {
        Command::Run { config, seed, out } => {
            let mut config = harness::load_config(&config)?;
            config.apply_seed_override(seed)?;
            let out = out.unwrap_or_else(|| config.output_path.clone());
            let summary = harness::run_experiment(&config, &out)?;
            for abort in &summary.aborts {
                eprintln!("repeat {} aborted at round {}: {}", abort.repeat, abort.info.round, abort.info.reason);
            }
            println!("wrote {}", out.display());
            if summary.any_aborted() || summary.diverged_repeats > 0 {
                return Ok(ExitCode::from(NON_CONVERGENCE));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { grid, repeats, out } => {
            let grid = BenchGrid::load(&grid)?;
            let report = harness::run_benchmark(&grid, repeats)?;
            for cell in &report.cells {
                let c = &cell.cell;
                let speedup = match cell.speedup {
                    Some(s) => format!("{s:.2}x"),
                    None => format!("unstable ({:.2}x)", cell.raw_ratio),
                };
                println!(
                    "p={} M={} k={} s={} {}: full {:.4}s  projected {:.4}s  speedup {}",
                    c.p,
                    c.clients,
                    c.k,
                    c.s,
                    c.aggregator.name(),
                    cell.unprojected.mean,
                    cell.projected.mean,
                    speedup
                );
            }
            for fit in &report.slopes {
                let variant = if fit.projected { "projected" } else { "full" };
                println!("slope {} {} M={} k={}: {:.3}", fit.aggregator.name(), variant, fit.clients, fit.k, fit.slope);
            }
            let text = serde_json::to_string_pretty(&report)?;
            std::fs::write(&out, text + "\n").map_err(|e| PdrError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            axis,
            values,
            seed,
            out,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let mut config = harness::load_config(&config)?;
            config.apply_seed_override(seed)?;
            let out = out.unwrap_or_else(|| config.output_path.clone());
            let result = harness::sweep(&config, axis, &values, &out)?;
            println!("wrote {}", result.csv_path.display());
            if result.rows.iter().any(|r| r.aborted_repeats > 0 || r.diverged_repeats > 0) {
                return Ok(ExitCode::from(NON_CONVERGENCE));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

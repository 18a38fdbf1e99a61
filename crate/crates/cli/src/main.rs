use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gtbp_cli::bench::{bench, BenchOptions, Sweep};
use gtbp_cli::config::{preset, ExperimentConfig};
use gtbp_cli::run::run_experiment;
use gtbp_cli::{CliError, Result};

/// Group-target tracking experiments.
///
/// The worker count for `run` is read from GTBP_WORKERS.
#[derive(Debug, Parser)]
#[command(name = "gtbp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo batch and write metrics.csv and tracks.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time the tracker over a sweep and write bench.csv.
    Bench {
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Repetitions per value.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 1000)]
        particles: usize,
        /// Partitions kept when the sweep is not over M.
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a built-in experiment config.
    Preset {
        #[arg(long)]
        name: String,
        #[arg(long, value_enum, default_value_t = Format::Toml)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Toml,
    Json,
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out, runs, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            cfg.validate()?;
            let out = out
                .or_else(|| cfg.out.clone())
                .ok_or_else(|| CliError::Config("out: no output directory given".into()))?;
            let summary = run_experiment(&cfg, &out)?;
            println!("{:<14} {:>12} {:>12}", "method", "mean ospa2", "ms/step");
            for s in summary {
                println!("{:<14} {:>12.3} {:>12.3}", s.method.to_string(), s.mean_ospa2, s.mean_step_ms);
            }
            println!("wrote {}", out.display());
        }
        Command::Bench { sweep, values, out, reps, steps, warmup, particles, m, seed } => {
            let opts = BenchOptions { reps, steps, warmup, particles, m_best: m, seed, ..BenchOptions::default() };
            let report = bench(sweep, &values, &opts)?;
            report.write(&out)?;
            println!("{:>10} {:>12}", sweep.name(), "ms/step");
            for (v, t) in report.values.iter().zip(&report.mean_ms) {
                println!("{v:>10} {t:>12.3}");
            }
            if let Some(f) = report.linear {
                println!("linear: slope {:.4} ms/unit, R² {:.4}", f.slope, f.r2);
            }
            if let Some(f) = report.loglog {
                println!("log-log slope {:.3}", f.slope);
            }
        }
        Command::Preset { name, format } => {
            let cfg = preset(&name)?;
            let text = match format {
                Format::Toml => cfg.to_toml()?,
                Format::Json => cfg.to_json()? + "\n",
            };
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

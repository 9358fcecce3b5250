use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cake_bench::{cmd_bench, cmd_oracle, cmd_overhead, cmd_populate, write_results, BenchOptions, ExperimentConfig, OVERHEAD_P99_LIMIT_NS};
use cake_core::ClockMode;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cake-bench", version, about = "Run cake KV-cache loading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "config/default.toml")]
    config: PathBuf,

    /// Output path; defaults to the config's `experiment.output` for bench.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's clock mode.
    #[arg(long, global = true, value_parser = ["sim", "live"])]
    mode: Option<String>,

    /// Also write a per-chunk event log for every run.
    #[arg(long, global = true)]
    verbose: bool,

    /// Run sim-mode cells in parallel.
    #[arg(long, global = true)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic KV chunks for every request of the experiment.
    Populate,
    /// Run the experiment matrix and write the results CSV.
    Bench,
    /// Check every deterministic cake run against the best fixed split.
    Oracle,
    /// Measure the per-chunk claim and residency decision.
    Overhead {
        #[arg(long, default_value_t = 64)]
        chunks: usize,
        #[arg(long, default_value_t = 2000)]
        rounds: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("cake-bench: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(mode) = &cli.mode {
        cfg.clock = mode.parse::<ClockMode>().map_err(anyhow::Error::msg)?;
    }
    Ok(cfg)
}

fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(path) => Box::new(io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Ok(false) means the command ran but something it checks failed.
fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Populate => {
            let cfg = load(&cli)?;
            cmd_populate(&cfg, &mut io::stdout().lock())?;
            Ok(true)
        }
        Command::Bench => {
            let cfg = load(&cli)?;
            let out = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
            let opts = BenchOptions { parallel: cli.parallel, events_dir: cli.verbose.then(|| out.with_extension("events")) };
            let rows = cmd_bench(&cfg, &opts)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_results(io::BufWriter::new(file), &rows)?;
            let failed = rows.iter().filter(|r| r.is_error()).count();
            println!("{} rows written to {} ({failed} aborted)", rows.len(), out.display());
            Ok(failed == 0)
        }
        Command::Oracle => {
            let cfg = load(&cli)?;
            let mut out = output(&cli)?;
            let report = cmd_oracle(&cfg, &mut out)?;
            out.flush()?;
            Ok(report.violations() == 0)
        }
        Command::Overhead { chunks, rounds } => {
            let stats = cmd_overhead(*chunks, *rounds);
            let mut out = output(&cli)?;
            writeln!(
                out,
                "samples={} p50_ns={} p99_ns={} max_ns={} limit_p99_ns={}",
                stats.samples, stats.p50_ns, stats.p99_ns, stats.max_ns, OVERHEAD_P99_LIMIT_NS
            )?;
            out.flush()?;
            Ok(stats.p99_ns < OVERHEAD_P99_LIMIT_NS)
        }
    }
}

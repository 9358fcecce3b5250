use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use cake_core::scheduler::{greedy_slack, oracle_best_split, ClaimTable, RunPlan};
use cake_core::store::request_keys;
use cake_core::transfer::ResidentSet;
use cake_core::{populate, run, ChunkStore, ClockMode, Micros, Mode, RequestSpec, RunReport, Side};
use log::{info, warn};
use rayon::prelude::*;

use crate::experiment::{Cell, ExperimentConfig};
use crate::results::{Measurement, ResultRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PopulateSummary {
    pub requests: usize,
    pub chunks_written: usize,
    pub bytes_written: u64,
}

/// Writes every (profile, codec, context length) request of the experiment
/// into its store. Chunks already present are skipped, so re-running is cheap.
pub fn cmd_populate(cfg: &ExperimentConfig, log: &mut dyn Write) -> Result<PopulateSummary> {
    let mut summary = PopulateSummary::default();
    for profile in &cfg.profiles {
        for &codec in &cfg.codecs {
            let dir = cfg.store_dir(profile, codec);
            let store = ChunkStore::open(&dir).with_context(|| format!("opening store {}", dir.display()))?;
            for &tokens in &cfg.context_lengths {
                let request = RequestSpec::new(tokens, cfg.chunk_size, 1.0);
                let fresh: Vec<_> = request_keys(&request, cfg.seed)?.into_iter().filter(|k| !store.contains(k)).collect();
                if let Err(e) = populate(&store, &request, profile, codec, cfg.seed) {
                    let partial = fresh.iter().filter_map(|k| store.meta(k).ok()).map(|m| m.encoded_bytes).sum::<u64>();
                    writeln!(
                        log,
                        "populate aborted at {} / {codec} / {tokens} tokens after {} bytes this request, {} bytes in earlier requests",
                        profile.name, partial, summary.bytes_written
                    )?;
                    return Err(e).context("populating store");
                }
                for key in &fresh {
                    summary.bytes_written += store.meta(key)?.encoded_bytes;
                }
                summary.chunks_written += fresh.len();
                summary.requests += 1;
            }
            store.compact()?;
        }
    }
    writeln!(
        log,
        "populated {} requests: {} new chunks, {} bytes written",
        summary.requests, summary.chunks_written, summary.bytes_written
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Run sim-mode cells on the rayon pool. Ignored in live mode.
    pub parallel: bool,
    /// Write each run's per-chunk event log into this directory.
    pub events_dir: Option<PathBuf>,
}

/// Runs every matrix cell once. A failing cell becomes an error-tagged row;
/// the remaining cells still run.
pub fn cmd_bench(cfg: &ExperimentConfig, opts: &BenchOptions) -> Result<Vec<ResultRow>> {
    let cells = cfg.matrix();
    if let Some(dir) = &opts.events_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let stores = StoreCache::default();
    let run_one = |(i, cell): (usize, &Cell)| {
        let outcome = run_cell(cfg, cell, &stores).and_then(|report| {
            if let Some(dir) = &opts.events_dir {
                write_event_log(dir, i, cell, &report)?;
            }
            Ok(Measurement::from(&report))
        });
        if let Err(e) = &outcome {
            warn!("cell {i} failed: {e:#}");
        }
        row_for(cfg, cell, outcome.map_err(|e| format!("{e:#}")))
    };
    let rows = if opts.parallel && cfg.clock == ClockMode::Sim {
        cells.par_iter().enumerate().map(run_one).collect()
    } else {
        if opts.parallel {
            info!("live mode runs sequentially; ignoring --parallel");
        }
        cells.iter().enumerate().map(run_one).collect()
    };
    Ok(rows)
}

fn row_for(cfg: &ExperimentConfig, cell: &Cell, outcome: Result<Measurement, String>) -> ResultRow {
    ResultRow {
        profile: cfg.profiles[cell.profile].name.clone(),
        cost_model: cfg.cost_models[cell.cost_model].0.clone(),
        context_tokens: cell.context_tokens,
        chunk_size: cfg.chunk_size,
        trace: cfg.traces[cell.trace].0.clone(),
        power_fraction: cell.power_fraction,
        codec: cell.codec.to_string(),
        mode: cell.mode,
        outcome,
    }
}

#[derive(Default)]
struct StoreCache {
    open: Mutex<HashMap<PathBuf, Arc<ChunkStore>>>,
}

impl StoreCache {
    fn get(&self, dir: &Path) -> Result<Arc<ChunkStore>> {
        let mut open = self.open.lock().map_err(|_| anyhow!("store cache poisoned"))?;
        if let Some(s) = open.get(dir) {
            return Ok(s.clone());
        }
        if !dir.exists() {
            return Err(anyhow!("store {} does not exist; run populate first", dir.display()));
        }
        let store = Arc::new(ChunkStore::open(dir)?);
        open.insert(dir.to_owned(), store.clone());
        Ok(store)
    }
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, stores: &StoreCache) -> Result<RunReport> {
    let request = cfg.request(cell);
    let profile = &cfg.profiles[cell.profile];
    let config = cfg.run_config(cell);
    let report = match cfg.clock {
        ClockMode::Sim => {
            let plan = RunPlan::analytic(&request, profile, cell.codec, cfg.seed)?;
            run(&plan, &config, cell.mode, None)?
        }
        ClockMode::Live => {
            let store = stores.get(&cfg.store_dir(profile, cell.codec))?;
            let keys = request_keys(&request, cfg.seed)?;
            let plan = RunPlan::from_store(&store, &request, &keys)?;
            run(&plan, &config, cell.mode, Some(&store))?
        }
    };
    report.check_coverage().map_err(|e| anyhow!("coverage violated: {e}"))?;
    Ok(report)
}

fn write_event_log(dir: &Path, index: usize, cell: &Cell, report: &RunReport) -> Result<()> {
    let path = dir.join(format!("{index:05}-{}.csv", cell.mode));
    let mut f = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    report.write_event_log(&mut f)?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleLine {
    pub row: ResultRow,
    pub ttft: Micros,
    pub ttft_star: Micros,
    pub slack: Micros,
}

impl OracleLine {
    pub fn holds(&self) -> bool {
        self.ttft <= self.ttft_star + self.slack
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub lines: Vec<OracleLine>,
    /// Cells left out because their trace varies over time.
    pub skipped: usize,
}

impl OracleReport {
    pub fn violations(&self) -> usize {
        self.lines.iter().filter(|l| !l.holds()).count()
    }
}

/// Compares every deterministic cake run against the exhaustive best split.
/// Runs in sim mode whatever the configured clock is.
pub fn cmd_oracle(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let mut seen = std::collections::HashSet::new();
    for cell in cfg.matrix() {
        // mode is irrelevant here; take each parameter tuple once
        let cell = Cell { mode: Mode::Cake, ..cell };
        let key = (cell.profile, cell.cost_model, cell.context_tokens, cell.trace, cell.power_fraction.to_bits(), cell.codec.to_string());
        if !seen.insert(key) {
            continue;
        }
        if !cfg.traces[cell.trace].1.is_constant() {
            report.skipped += 1;
            continue;
        }
        let mut config = cfg.run_config(&cell);
        config.clock = ClockMode::Sim;
        let plan = RunPlan::analytic(&cfg.request(&cell), &cfg.profiles[cell.profile], cell.codec, cfg.seed)?;
        let run_report = run(&plan, &config, Mode::Cake, None)?;
        let (compute, fetch) = config.chunk_durations(&plan);
        let (_, ttft_star) = oracle_best_split(&compute, &fetch);
        let line = OracleLine {
            slack: greedy_slack(&compute, &fetch, run_report.merge_point),
            ttft: run_report.ttft,
            ttft_star,
            row: row_for(cfg, &cell, Ok(Measurement::from(&run_report))),
        };
        writeln!(
            out,
            "{} {} {} {} p={} {}: ttft={} ttft*={} gap={} slack={} {}",
            line.row.profile,
            line.row.cost_model,
            line.row.context_tokens,
            line.row.trace,
            line.row.power_fraction,
            line.row.codec,
            line.ttft.0,
            ttft_star.0,
            line.ttft.0 as i64 - ttft_star.0 as i64,
            line.slack.0,
            if line.holds() { "ok" } else { "VIOLATION" }
        )?;
        report.lines.push(line);
    }
    writeln!(
        out,
        "{} runs checked, {} violations, {} skipped (time-varying trace)",
        report.lines.len(),
        report.violations(),
        report.skipped
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadStats {
    pub samples: usize,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

/// Times the per-chunk scheduling decision on the wall clock: a residency
/// lookup followed by a claim attempt, alternating between the two ends the
/// way the two workers would. No sleeping or I/O is involved.
pub fn cmd_overhead(n_chunks: usize, rounds: usize) -> OverheadStats {
    let keys = request_keys(&RequestSpec::new(n_chunks as u32 * 512, 512, 1.0), 0).expect("non-empty request");
    let resident = ResidentSet::default();
    let clock = Instant::now();
    let mut samples = Vec::with_capacity(n_chunks * rounds);
    for _ in 0..rounds {
        let table = ClaimTable::new(n_chunks);
        let mut turn = Side::Compute;
        while let Some(index) = table.next_for(turn) {
            let t0 = Instant::now();
            let decided = !resident.is_resident(&keys[index]) && table.claim(turn, index, Micros::from_duration(clock.elapsed()));
            samples.push(t0.elapsed().as_nanos() as u64);
            assert!(decided, "uncontended claim of chunk {index} failed");
            turn = match turn {
                Side::Compute => Side::Io,
                Side::Io => Side::Compute,
            };
        }
        assert!(table.all_claimed());
    }
    samples.sort_unstable();
    let pct = |p: f64| samples[((samples.len() as f64 * p).ceil() as usize).clamp(1, samples.len()) - 1];
    OverheadStats { samples: samples.len(), p50_ns: pct(0.50), p99_ns: pct(0.99), max_ns: *samples.last().unwrap_or(&0) }
}

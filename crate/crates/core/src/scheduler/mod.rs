//! Bidirectional orchestration: compute claims chunks from the front, the
//! fetch worker claims them from the back, and the run ends when the two
//! pointers cross.
//!
//! Two clock modes share the claim protocol. Sim mode is a discrete-event
//! loop over a virtual clock and is fully deterministic; simultaneous
//! decisions go to the compute side. Live mode runs the real fetch worker
//! thread against the store and sleeps out compute steps on the wall clock.

mod claim;
mod live;
mod oracle;
mod report;
mod sim;

use std::sync::Arc;

use thiserror::Error;

pub use claim::{ClaimTable, PointerState, Side};
pub use oracle::{greedy_slack, oracle_best_split, split_ttft};
pub use report::{ChunkEvent, Mode, RunReport, EVENT_LOG_HEADER, SUMMARY_HEADER};

use crate::clock::ClockMode;
use crate::codec::Codec;
use crate::model::{chunk_bytes, compute_latency, ChunkSpec, CostModel, ModelError, ModelProfile, RequestSpec};
use crate::store::{request_keys, ChunkKey, ChunkStore, StoreError};
use crate::time::Micros;
use crate::trace::{fetch_latency, BandwidthTrace};
use crate::transfer::{TransferError, DEFAULT_QUANTUM_BYTES};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// Everything a run needs to know about one request's chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub request: RequestSpec,
    pub chunks: Vec<ChunkSpec>,
    pub keys: Vec<ChunkKey>,
    /// Uncompressed KV bytes per chunk.
    pub kv_bytes: Vec<u64>,
    /// Bytes the fetch side moves per chunk.
    pub encoded_bytes: Vec<u64>,
    pub codec: Codec,
}

impl RunPlan {
    /// Plan backed by a populated store; every key must be committed.
    pub fn from_store(store: &ChunkStore, request: &RequestSpec, keys: &[ChunkKey]) -> Result<Self, RunError> {
        request.validate()?;
        let chunks = request.chunks()?;
        if keys.len() != chunks.len() {
            return Err(RunError::Config(format!("{} keys for {} chunks", keys.len(), chunks.len())));
        }
        let metas = keys.iter().map(|k| store.meta(k)).collect::<Result<Vec<_>, _>>()?;
        let codec = metas.first().map_or(Codec::Identity, |m| m.codec);
        if let Some(m) = metas.iter().find(|m| m.codec != codec) {
            return Err(RunError::Config(format!("mixed codecs in one request: {} and {}", codec, m.codec)));
        }
        Ok(RunPlan {
            request: *request,
            kv_bytes: metas.iter().map(|m| m.uncompressed_bytes).collect(),
            encoded_bytes: metas.iter().map(|m| m.encoded_bytes).collect(),
            keys: keys.to_vec(),
            chunks,
            codec,
        })
    }

    /// Plan derived from the cost laws alone, for sim runs without a store.
    pub fn analytic(request: &RequestSpec, profile: &ModelProfile, codec: Codec, seed: u64) -> Result<Self, RunError> {
        request.validate()?;
        profile.validate()?;
        let chunks = request.chunks()?;
        let kv_bytes: Vec<u64> = chunks.iter().map(|c| chunk_bytes(profile, c)).collect();
        Ok(RunPlan {
            request: *request,
            encoded_bytes: kv_bytes.iter().map(|&b| codec.encoded_len(b)).collect(),
            kv_bytes,
            keys: request_keys(request, seed)?,
            chunks,
            codec,
        })
    }

    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cost: CostModel,
    pub trace: BandwidthTrace,
    pub clock: ClockMode,
    pub budget_per_step: u32,
    pub quantum_bytes: u64,
    /// Decode charge per uncompressed byte when the codec is not identity.
    pub decode_ns_per_byte: f64,
    /// Live mode only: each worker pauses a uniform random `[0, max]` µs before every chunk.
    pub jitter_max_us: u64,
    pub jitter_seed: u64,
}

impl RunConfig {
    pub fn new(cost: CostModel, trace: BandwidthTrace, clock: ClockMode) -> Self {
        RunConfig {
            cost,
            trace,
            clock,
            budget_per_step: 512,
            quantum_bytes: DEFAULT_QUANTUM_BYTES,
            decode_ns_per_byte: 0.0,
            jitter_max_us: 0,
            jitter_seed: 0,
        }
    }

    fn validate(&self, plan: &RunPlan) -> Result<(), RunError> {
        self.cost.validate()?;
        plan.request.validate()?;
        if plan.request.chunk_size > self.budget_per_step {
            return Err(RunError::Config(format!(
                "chunk size {} exceeds the {}-token step budget",
                plan.request.chunk_size, self.budget_per_step
            )));
        }
        if !(self.decode_ns_per_byte >= 0.0 && self.decode_ns_per_byte.is_finite()) {
            return Err(RunError::Config(format!("decode_ns_per_byte = {}", self.decode_ns_per_byte)));
        }
        if plan.encoded_bytes.contains(&0) {
            return Err(RunError::Config("a chunk encodes to zero bytes".into()));
        }
        Ok(())
    }

    pub(crate) fn compute_duration(&self, plan: &RunPlan, index: usize) -> Micros {
        compute_latency(&self.cost, &plan.chunks[index], plan.request.power_fraction).expect("power fraction validated")
    }

    pub(crate) fn decode_duration(&self, plan: &RunPlan, index: usize) -> Micros {
        if plan.codec.is_identity() {
            Micros::ZERO
        } else {
            Micros((self.decode_ns_per_byte * plan.kv_bytes[index] as f64 / 1000.0).round() as u64)
        }
    }

    pub(crate) fn fetch_duration(&self, plan: &RunPlan, index: usize, start: Micros) -> Micros {
        fetch_latency(&self.trace, plan.encoded_bytes[index], start) + self.decode_duration(plan, index)
    }

    /// Per-chunk compute and fetch durations, fetches priced as if started at
    /// t = 0. Exact per-chunk costs only when the trace is constant.
    pub fn chunk_durations(&self, plan: &RunPlan) -> (Vec<Micros>, Vec<Micros>) {
        let n = plan.n_chunks();
        ((0..n).map(|i| self.compute_duration(plan, i)).collect(), (0..n).map(|i| self.fetch_duration(plan, i, Micros::ZERO)).collect())
    }
}

/// Which workers take part in a cake run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sides {
    pub compute: bool,
    pub io: bool,
}

impl Sides {
    pub const BOTH: Sides = Sides { compute: true, io: true };
    pub const COMPUTE_ONLY: Sides = Sides { compute: true, io: false };
    pub const IO_ONLY: Sides = Sides { compute: false, io: true };
}

/// Runs one request in the given mode.
///
/// Sim mode needs no store. Live mode reads every fetched chunk from `store`.
pub fn run(plan: &RunPlan, config: &RunConfig, mode: Mode, store: Option<&Arc<ChunkStore>>) -> Result<RunReport, RunError> {
    config.validate(plan)?;
    match (config.clock, mode) {
        (ClockMode::Sim, Mode::Cake) => Ok(sim::simulate(plan, config, Sides::BOTH)),
        (ClockMode::Sim, Mode::ComputeOnly) => Ok(sim::compute_only(plan, config)),
        (ClockMode::Sim, Mode::IoOnly) => Ok(sim::io_only(plan, config)),
        (ClockMode::Live, mode) => {
            let sides = match mode {
                Mode::Cake => Sides::BOTH,
                Mode::ComputeOnly => Sides::COMPUTE_ONLY,
                Mode::IoOnly => Sides::IO_ONLY,
            };
            let mut report = live::run_live(plan, config, sides, live_store(store)?)?;
            report.mode = mode;
            Ok(report)
        }
    }
}

/// The cake scheduler with one side optionally switched off. With a single
/// side enabled it degenerates to the matching baseline.
pub fn run_with_sides(plan: &RunPlan, config: &RunConfig, sides: Sides, store: Option<&Arc<ChunkStore>>) -> Result<RunReport, RunError> {
    config.validate(plan)?;
    if !sides.compute && !sides.io {
        return Err(RunError::Config("at least one side must be enabled".into()));
    }
    match config.clock {
        ClockMode::Sim => Ok(sim::simulate(plan, config, sides)),
        ClockMode::Live => live::run_live(plan, config, sides, live_store(store)?),
    }
}

fn live_store(store: Option<&Arc<ChunkStore>>) -> Result<&Arc<ChunkStore>, RunError> {
    store.ok_or_else(|| RunError::Config("live mode needs a populated chunk store".into()))
}

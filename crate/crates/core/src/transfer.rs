//! The fetch side: a single worker that drains a back-to-front task queue,
//! reads each chunk from the store under bandwidth throttling, and publishes
//! it to the resident set.

use std::collections::{HashMap, VecDeque};
use std::io::Read;
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;

use crate::clock::{Clock, ClockMode};
use crate::codec::CodecError;
use crate::model::ChunkSpec;
use crate::store::{ChunkKey, ChunkStore, StoreError};
use crate::time::Micros;
use crate::trace::{fetch_latency, BandwidthTrace};

/// Default read slice: 4 MiB.
pub const DEFAULT_QUANTUM_BYTES: u64 = 4 << 20;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("fetch engine is stopped")]
    Stopped,
    #[error("cannot preallocate {bytes} bytes for chunk {key}")]
    Allocation { key: ChunkKey, bytes: u64 },
    #[error("fetch task for chunk {0} has zero bytes")]
    EmptyTask(ChunkKey),
    #[error("fetch of chunk {key} failed: {source}")]
    Store { key: ChunkKey, source: StoreError },
    #[error("decode of chunk {key} failed: {source}")]
    Decode { key: ChunkKey, source: CodecError },
    #[error("chunk {key}: store holds {actual} bytes, task expects {expected}")]
    SizeMismatch { key: ChunkKey, expected: u64, actual: u64 },
    #[error("fetch worker panicked")]
    WorkerPanic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FetchTask {
    pub key: ChunkKey,
    pub chunk: ChunkSpec,
    pub encoded_bytes: u64,
}

/// One completed fetch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FetchRecord {
    pub key: ChunkKey,
    pub index: usize,
    pub start: Micros,
    pub finish: Micros,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct Resident {
    pub completed_at: Micros,
    pub payload: Arc<Vec<u8>>,
}

/// Chunks whose payloads are fully in memory. Keys are never removed.
#[derive(Debug, Default)]
pub struct ResidentSet {
    chunks: RwLock<HashMap<ChunkKey, Resident>>,
}

impl ResidentSet {
    pub fn is_resident(&self, key: &ChunkKey) -> bool {
        self.chunks.read().contains_key(key)
    }

    pub fn get(&self, key: &ChunkKey) -> Option<Resident> {
        self.chunks.read().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.chunks.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn publish(&self, key: ChunkKey, resident: Resident) {
        let prev = self.chunks.write().insert(key, resident);
        debug_assert!(prev.is_none(), "chunk {key} published twice");
    }
}

/// `(release time, bytes)` of one throttled slice.
pub type Delivery = (Micros, u64);

/// Paces reads so cumulative delivered bits track a bandwidth trace.
pub struct Throttle {
    trace: BandwidthTrace,
    quantum_bytes: u64,
    mode: ClockMode,
    clock: Arc<dyn Clock>,
    consumed_bits: u64,
    deliveries: Vec<Delivery>,
}

impl Throttle {
    pub fn new(trace: BandwidthTrace, quantum_bytes: u64, mode: ClockMode, clock: Arc<dyn Clock>) -> Self {
        Throttle { trace, quantum_bytes: quantum_bytes.max(1), mode, clock, consumed_bits: 0, deliveries: Vec::new() }
    }

    pub fn consumed_bits(&self) -> u64 {
        self.consumed_bits
    }

    /// `(release time, bytes)` for every slice delivered so far.
    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    /// Fills `dst` from `src` starting at `start`; returns the completion time.
    ///
    /// Live mode reads quantum-sized slices and holds each one back until the
    /// trace would have delivered it. Sim mode reads without pacing and
    /// advances the clock by exactly [`fetch_latency`].
    pub fn read<R: Read>(&mut self, src: &mut R, dst: &mut [u8], start: Micros) -> std::io::Result<Micros> {
        let nbytes = dst.len() as u64;
        match self.mode {
            ClockMode::Sim => {
                src.read_exact(dst)?;
                let done = start + fetch_latency(&self.trace, nbytes, start);
                self.consumed_bits += nbytes * 8;
                self.deliveries.push((done, nbytes));
                self.clock.sleep_until(done);
                Ok(done)
            }
            ClockMode::Live => {
                let mut t_us = start.0 as f64;
                for piece in dst.chunks_mut(self.quantum_bytes.min(usize::MAX as u64) as usize) {
                    src.read_exact(piece)?;
                    let slice = piece.len() as u64;
                    t_us += self.trace.transfer_time_us(slice, t_us);
                    let release = Micros(t_us.ceil() as u64);
                    self.clock.sleep_until(release);
                    self.consumed_bits += slice * 8;
                    self.deliveries.push((release, slice));
                }
                Ok(Micros(t_us.ceil() as u64))
            }
        }
    }
}

/// Decides, just before a fetch starts, whether the worker may take the chunk.
pub type FetchGate = Arc<dyn Fn(&FetchTask) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct EngineConfig {
    pub trace: BandwidthTrace,
    pub quantum_bytes: u64,
    pub mode: ClockMode,
    pub clock: Arc<dyn Clock>,
    /// Decode charge per uncompressed byte for non-identity codecs.
    pub decode_ns_per_byte: f64,
}

impl EngineConfig {
    pub fn new(trace: BandwidthTrace, mode: ClockMode, clock: Arc<dyn Clock>) -> Self {
        EngineConfig { trace, quantum_bytes: DEFAULT_QUANTUM_BYTES, mode, clock, decode_ns_per_byte: 0.0 }
    }
}

struct Pending {
    task: FetchTask,
    buffer: Vec<u8>,
}

#[derive(Default)]
struct Queue {
    pending: VecDeque<Pending>,
    stopped: bool,
    closed: bool,
}

struct Shared {
    queue: Mutex<Queue>,
    wake: Condvar,
    resident: Arc<ResidentSet>,
    records: Mutex<Vec<FetchRecord>>,
    throttle: Mutex<Throttle>,
}

/// Handle to a running fetch worker.
pub struct TransferEngine {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<Result<(), TransferError>>>,
}

impl TransferEngine {
    /// Starts the worker thread. `gate` is consulted before every fetch; a
    /// `false` answer stops the worker as if [`stop`](Self::stop) were called.
    pub fn start(store: Arc<ChunkStore>, config: EngineConfig, gate: Option<FetchGate>) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::new(Queue::default()),
            wake: Condvar::new(),
            resident: Arc::new(ResidentSet::default()),
            records: Mutex::new(Vec::new()),
            throttle: Mutex::new(Throttle::new(config.trace.clone(), config.quantum_bytes, config.mode, config.clock.clone())),
        });
        let worker_shared = shared.clone();
        let gate = gate.unwrap_or_else(|| Arc::new(|_: &FetchTask| true));
        let worker = std::thread::Builder::new()
            .name("kv-fetch".into())
            .spawn(move || run_worker(&worker_shared, &store, &config, &gate))
            .expect("spawn fetch worker");
        TransferEngine { shared, worker: Some(worker) }
    }

    /// Enqueues tasks in the given order (callers pass highest chunk index
    /// first) and preallocates each destination buffer immediately.
    pub fn push_seq(&self, tasks: &[FetchTask]) -> Result<(), TransferError> {
        let mut prepared = Vec::with_capacity(tasks.len());
        for task in tasks {
            if task.encoded_bytes == 0 {
                return Err(TransferError::EmptyTask(task.key));
            }
            let mut buffer = Vec::new();
            buffer
                .try_reserve_exact(task.encoded_bytes as usize)
                .map_err(|_| TransferError::Allocation { key: task.key, bytes: task.encoded_bytes })?;
            // touch every page now so the paced read never stalls on page faults
            buffer.resize(task.encoded_bytes as usize, 0);
            prepared.push(Pending { task: *task, buffer });
        }
        let mut queue = self.shared.queue.lock();
        if queue.stopped || queue.closed {
            return Err(TransferError::Stopped);
        }
        queue.pending.extend(prepared);
        drop(queue);
        self.shared.wake.notify_all();
        Ok(())
    }

    pub fn is_resident(&self, key: &ChunkKey) -> bool {
        self.shared.resident.is_resident(key)
    }

    pub fn resident(&self) -> &ResidentSet {
        &self.shared.resident
    }

    /// Shared handle to the resident set, for probing from other workers.
    pub fn resident_handle(&self) -> Arc<ResidentSet> {
        self.shared.resident.clone()
    }

    /// Abandons queued tasks and releases their buffers. The chunk in flight,
    /// if any, still completes. Idempotent.
    pub fn stop(&self) {
        let abandoned = {
            let mut queue = self.shared.queue.lock();
            queue.stopped = true;
            std::mem::take(&mut queue.pending)
        };
        drop(abandoned);
        self.shared.wake.notify_all();
    }

    /// Lets the worker exit once the queue is empty.
    pub fn close(&self) {
        self.shared.queue.lock().closed = true;
        self.shared.wake.notify_all();
    }

    pub fn queued(&self) -> usize {
        self.shared.queue.lock().pending.len()
    }

    pub fn records(&self) -> Vec<FetchRecord> {
        self.shared.records.lock().clone()
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.shared.throttle.lock().deliveries().to_vec()
    }

    /// Waits for the worker to exit and returns its completed fetches.
    pub fn join(mut self) -> Result<Vec<FetchRecord>, TransferError> {
        self.wait()?;
        Ok(self.records())
    }

    /// Like [`join`](Self::join), also returning the throttle's delivery log.
    pub fn join_with_deliveries(mut self) -> Result<(Vec<FetchRecord>, Vec<Delivery>), TransferError> {
        self.wait()?;
        Ok((self.records(), self.deliveries()))
    }

    fn wait(&mut self) -> Result<(), TransferError> {
        match self.worker.take() {
            Some(handle) => handle.join().map_err(|_| TransferError::WorkerPanic)?,
            None => Ok(()),
        }
    }
}

impl Drop for TransferEngine {
    fn drop(&mut self) {
        if self.worker.is_some() {
            self.stop();
            let _ = self.wait();
        }
    }
}

fn run_worker(shared: &Shared, store: &ChunkStore, config: &EngineConfig, gate: &FetchGate) -> Result<(), TransferError> {
    loop {
        let next = {
            let mut queue = shared.queue.lock();
            loop {
                if queue.stopped {
                    return Ok(());
                }
                if let Some(p) = queue.pending.pop_front() {
                    break p;
                }
                if queue.closed {
                    return Ok(());
                }
                shared.wake.wait(&mut queue);
            }
        };
        if !gate(&next.task) {
            let mut queue = shared.queue.lock();
            queue.stopped = true;
            queue.pending.clear();
            return Ok(());
        }
        let record = fetch_one(shared, store, config, next)?;
        shared.records.lock().push(record);
    }
}

fn fetch_one(shared: &Shared, store: &ChunkStore, config: &EngineConfig, pending: Pending) -> Result<FetchRecord, TransferError> {
    let Pending { task, mut buffer } = pending;
    let key = task.key;
    let store_err = |source| TransferError::Store { key, source };
    let (mut file, meta) = store.open_chunk(&key).map_err(store_err)?;
    if meta.encoded_bytes != task.encoded_bytes {
        return Err(TransferError::SizeMismatch { key, expected: task.encoded_bytes, actual: meta.encoded_bytes });
    }
    let start = config.clock.now();
    let mut finish = shared.throttle.lock().read(&mut file, &mut buffer, start).map_err(|e| store_err(e.into()))?;

    let payload = if meta.codec.is_identity() {
        buffer
    } else {
        let decoded = meta.codec.decode(&buffer, meta.uncompressed_bytes).map_err(|source| TransferError::Decode { key, source })?;
        let cost_us = (config.decode_ns_per_byte * meta.uncompressed_bytes as f64 / 1000.0).round() as u64;
        finish += Micros(cost_us);
        config.clock.sleep_until(finish);
        decoded
    };
    shared.resident.publish(key, Resident { completed_at: finish, payload: Arc::new(payload) });
    Ok(FetchRecord { key, index: task.chunk.index, start, finish, bytes: task.encoded_bytes })
}

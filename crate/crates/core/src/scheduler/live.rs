use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::claim::{ClaimTable, Side};
use super::report::{ChunkEvent, Mode, RunReport};
use super::{RunConfig, RunError, RunPlan, Sides};
use crate::clock::{Clock, ClockMode, WallClock};
use crate::compute::{ComputeEngine, TokenBudget};
use crate::store::ChunkStore;
use crate::time::Micros;
use crate::transfer::{EngineConfig, FetchGate, FetchTask, TransferEngine};

/// Runs the workers for real: the fetch worker on its own thread, compute on
/// the calling thread. Blocks until both have finished.
pub(super) fn run_live(plan: &RunPlan, config: &RunConfig, sides: Sides, store: &Arc<ChunkStore>) -> Result<RunReport, RunError> {
    let n = plan.n_chunks();
    let clock = Arc::new(WallClock::start());
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    let table = Arc::new(ClaimTable::new(n));

    let engine = if sides.io {
        let gate_table = table.clone();
        let gate_clock = clock.clone();
        let jitter = jitter_source(config, 1);
        let gate: FetchGate = Arc::new(move |task: &FetchTask| {
            if let Some(pause) = jitter.as_ref().map(|j| j.lock().next()) {
                gate_clock.sleep_until(gate_clock.now() + pause);
            }
            gate_table.claim(Side::Io, task.chunk.index, gate_clock.now())
        });
        let mut engine_config = EngineConfig::new(config.trace.clone(), ClockMode::Live, dyn_clock.clone());
        engine_config.quantum_bytes = config.quantum_bytes;
        engine_config.decode_ns_per_byte = config.decode_ns_per_byte;
        let engine = TransferEngine::start(store.clone(), engine_config, Some(gate));
        let tasks: Vec<FetchTask> =
            (0..n).rev().map(|i| FetchTask { key: plan.keys[i], chunk: plan.chunks[i], encoded_bytes: plan.encoded_bytes[i] }).collect();
        engine.push_seq(&tasks)?;
        if !sides.compute {
            engine.close();
        }
        Some(engine)
    } else {
        None
    };

    let mut steps = Vec::new();
    let mut stop_signal_at = None;
    if sides.compute {
        let budget = TokenBudget { budget_per_step: config.budget_per_step, share_for_request: plan.request.power_fraction };
        let mut compute = ComputeEngine::new(config.cost, budget, ClockMode::Live, dyn_clock.clone())?;
        if let Some(mut jitter) = jitter_source(config, 0) {
            compute = compute.with_jitter(move || jitter.get_mut().next());
        }
        let resident = engine.as_ref().map(|e| e.resident_handle());
        steps = compute.run_forward(
            &plan.chunks,
            |c| resident.as_ref().is_some_and(|r| r.is_resident(&plan.keys[c.index])),
            |c, at| table.claim(Side::Compute, c.index, at),
        );
        if let Some(engine) = &engine {
            stop_signal_at = Some(clock.now());
            engine.stop();
        }
    }

    let fetched = match engine {
        Some(engine) => engine.join()?,
        None => Vec::new(),
    };

    let mut events: Vec<ChunkEvent> = steps
        .iter()
        .map(|s| ChunkEvent {
            index: s.chunk.index,
            side: Side::Compute,
            start: s.started_at,
            finish: s.finished_at,
            bytes: plan.kv_bytes[s.chunk.index],
        })
        .collect();
    events.extend(fetched.iter().map(|r| ChunkEvent { index: r.index, side: Side::Io, start: r.start, finish: r.finish, bytes: r.bytes }));
    if !table.all_claimed() {
        return Err(RunError::Config("run ended with unclaimed chunks".into()));
    }
    Ok(RunReport::from_events(Mode::Cake, n, events, stop_signal_at))
}

struct Jitter {
    rng: ChaCha8Rng,
    max_us: u64,
}

impl Jitter {
    fn next(&mut self) -> Micros {
        Micros(self.rng.gen_range(0..=self.max_us))
    }
}

fn jitter_source(config: &RunConfig, stream: u64) -> Option<Mutex<Jitter>> {
    (config.jitter_max_us > 0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.jitter_seed);
        rng.set_stream(stream);
        Mutex::new(Jitter { rng, max_us: config.jitter_max_us })
    })
}

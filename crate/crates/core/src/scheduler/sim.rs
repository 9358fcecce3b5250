//! Deterministic discrete-event runs on a virtual clock.

use super::claim::{ClaimTable, Side};
use super::report::{ChunkEvent, Mode, RunReport};
use super::{RunConfig, RunPlan, Sides};
use crate::time::Micros;

/// Greedy bidirectional run. Each enabled side, when free, claims the next
/// chunk from its end; the side with the earlier free time acts first and
/// compute wins exact ties.
pub(super) fn simulate(plan: &RunPlan, config: &RunConfig, sides: Sides) -> RunReport {
    let n = plan.n_chunks();
    let table = ClaimTable::new(n);
    let mut compute_free = sides.compute.then_some(Micros::ZERO);
    let mut io_free = sides.io.then_some(Micros::ZERO);
    let mut events = Vec::with_capacity(n);
    let mut stop_signal_at = None;

    loop {
        let side = match (compute_free, io_free) {
            (None, None) => break,
            (Some(_), None) => Side::Compute,
            (None, Some(_)) => Side::Io,
            (Some(c), Some(i)) => {
                if c <= i {
                    Side::Compute
                } else {
                    Side::Io
                }
            }
        };
        match side {
            Side::Compute => {
                let now = compute_free.expect("compute side active");
                match table.next_for(Side::Compute) {
                    Some(index) if table.claim(Side::Compute, index, now) => {
                        let finish = now + config.compute_duration(plan, index);
                        events.push(ChunkEvent { index, side, start: now, finish, bytes: plan.kv_bytes[index] });
                        compute_free = Some(finish);
                    }
                    _ => {
                        compute_free = None;
                        if io_free.is_some() {
                            // the fetch worker keeps only its in-flight chunk
                            stop_signal_at = Some(now);
                            io_free = None;
                        }
                    }
                }
            }
            Side::Io => {
                let now = io_free.expect("io side active");
                match table.next_for(Side::Io) {
                    Some(index) if table.claim(Side::Io, index, now) => {
                        let finish = now + config.fetch_duration(plan, index, now);
                        events.push(ChunkEvent { index, side, start: now, finish, bytes: plan.encoded_bytes[index] });
                        io_free = Some(finish);
                    }
                    _ => io_free = None,
                }
            }
        }
    }
    RunReport::from_events(Mode::Cake, n, events, stop_signal_at)
}

/// Chunk prefill of every chunk, front to back.
pub(super) fn compute_only(plan: &RunPlan, config: &RunConfig) -> RunReport {
    let mut t = Micros::ZERO;
    let events = (0..plan.n_chunks())
        .map(|index| {
            let start = t;
            t += config.compute_duration(plan, index);
            ChunkEvent { index, side: Side::Compute, start, finish: t, bytes: plan.kv_bytes[index] }
        })
        .collect();
    RunReport::from_events(Mode::ComputeOnly, plan.n_chunks(), events, None)
}

/// Fetch of every chunk, back to front.
pub(super) fn io_only(plan: &RunPlan, config: &RunConfig) -> RunReport {
    let mut t = Micros::ZERO;
    let events = (0..plan.n_chunks())
        .rev()
        .map(|index| {
            let start = t;
            t += config.fetch_duration(plan, index, start);
            ChunkEvent { index, side: Side::Io, start, finish: t, bytes: plan.encoded_bytes[index] }
        })
        .collect();
    RunReport::from_events(Mode::IoOnly, plan.n_chunks(), events, None)
}

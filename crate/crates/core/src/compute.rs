//! The compute side: front-to-back chunk prefill under a token budget.
//!
//! No transformer math runs here. A step occupies the clock for exactly the
//! cost model's latency; in live mode that means sleeping.

use std::sync::Arc;

use serde::Deserialize;

use crate::clock::{Clock, ClockMode};
use crate::model::{check_power, compute_latency, ChunkSpec, CostModel, ModelError};
use crate::time::Micros;

/// Per-step token cap and the share of it this request receives. The share is
/// the request's effective GPU power fraction.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TokenBudget {
    #[serde(default = "default_budget")]
    pub budget_per_step: u32,
    #[serde(default = "default_share")]
    pub share_for_request: f64,
}

fn default_budget() -> u32 {
    512
}

fn default_share() -> f64 {
    1.0
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget { budget_per_step: 512, share_for_request: 1.0 }
    }
}

impl TokenBudget {
    pub fn with_share(share_for_request: f64) -> Self {
        TokenBudget { share_for_request, ..Self::default() }
    }

    pub fn power_fraction(&self) -> f64 {
        self.share_for_request
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefillStep {
    pub chunk: ChunkSpec,
    pub started_at: Micros,
    pub finished_at: Micros,
}

impl PrefillStep {
    pub fn duration(&self) -> Micros {
        self.finished_at - self.started_at
    }
}

pub struct ComputeEngine {
    cost: CostModel,
    budget: TokenBudget,
    clock: Arc<dyn Clock>,
    mode: ClockMode,
    /// Chunks `0..computed` are done.
    computed: usize,
    jitter: Option<Box<dyn FnMut() -> Micros + Send>>,
}

impl ComputeEngine {
    pub fn new(cost: CostModel, budget: TokenBudget, mode: ClockMode, clock: Arc<dyn Clock>) -> Result<Self, ModelError> {
        cost.validate()?;
        check_power(budget.power_fraction())?;
        Ok(ComputeEngine { cost, budget, clock, mode, computed: 0, jitter: None })
    }

    /// Adds a random pause before each step (live-mode stress testing).
    pub fn with_jitter(mut self, jitter: impl FnMut() -> Micros + Send + 'static) -> Self {
        self.jitter = Some(Box::new(jitter));
        self
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn step_latency(&self, chunk: &ChunkSpec) -> Micros {
        compute_latency(&self.cost, chunk, self.budget.power_fraction()).expect("power fraction validated at construction")
    }

    /// Computes one chunk's KV.
    ///
    /// # Panics
    ///
    /// If any lower-indexed chunk has not been computed first, or the chunk
    /// exceeds the per-step token budget.
    pub fn prefill_chunk(&mut self, chunk: &ChunkSpec) -> PrefillStep {
        assert_eq!(
            chunk.index, self.computed,
            "prefix dependency violated: chunk {} scheduled with {} chunks computed",
            chunk.index, self.computed
        );
        assert!(
            chunk.token_count <= self.budget.budget_per_step,
            "chunk of {} tokens exceeds the {}-token step budget",
            chunk.token_count,
            self.budget.budget_per_step
        );
        if let Some(jitter) = self.jitter.as_mut() {
            let pause = jitter();
            let now = self.clock.now();
            self.clock.sleep_until(now + pause);
        }
        let started_at = self.clock.now();
        let finished_at = started_at + self.step_latency(chunk);
        self.clock.sleep_until(finished_at);
        self.computed += 1;
        PrefillStep { chunk: *chunk, started_at, finished_at }
    }

    /// Runs forward from the first uncomputed chunk.
    ///
    /// Before each chunk the resident probe is consulted, then `claim`; the
    /// loop ends at the first chunk that is resident or that cannot be claimed.
    pub fn run_forward(
        &mut self,
        chunks: &[ChunkSpec],
        mut resident_probe: impl FnMut(&ChunkSpec) -> bool,
        mut claim: impl FnMut(&ChunkSpec, Micros) -> bool,
    ) -> Vec<PrefillStep> {
        let mut steps = Vec::new();
        for chunk in &chunks[self.computed.min(chunks.len())..] {
            if resident_probe(chunk) || !claim(chunk, self.clock.now()) {
                break;
            }
            steps.push(self.prefill_chunk(chunk));
        }
        steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::model::split_into_chunks;

    fn engine(power: f64) -> ComputeEngine {
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
        ComputeEngine::new(CostModel::new(10.0, 0.01), TokenBudget::with_share(power), ClockMode::Sim, clock).unwrap()
    }

    #[test]
    fn first_chunk_takes_alpha() {
        let mut e = engine(1.0);
        let chunks = split_into_chunks(512, 512).unwrap();
        let step = e.prefill_chunk(&chunks[0]);
        assert_eq!(step.duration(), Micros(10_000));
    }

    #[test]
    fn low_power_scales_inversely() {
        let chunks = split_into_chunks(2048, 512).unwrap();
        let full: Vec<Micros> = {
            let mut e = engine(1.0);
            chunks.iter().map(|c| e.prefill_chunk(c).duration()).collect()
        };
        let mut e = engine(0.1);
        for (c, f) in chunks.iter().zip(full) {
            assert_eq!(e.prefill_chunk(c).duration(), Micros(f.0 * 10));
        }
    }

    #[test]
    fn sixty_four_chunks_sum_is_quadratic() {
        let chunks = split_into_chunks(32768, 512).unwrap();
        let mut e = engine(1.0);
        let steps = e.run_forward(&chunks, |_| false, |_, _| true);
        assert_eq!(steps.len(), 64);
        // closed form: sum_{i<64} (10 + 0.01 * 512 * i) ms = 640 + 5.12 * 2016
        let closed_form_us = ((64.0 * 10.0 + 0.01 * 512.0 * 2016.0) * 1000.0_f64).round() as u64;
        assert_eq!(steps.last().unwrap().finished_at, Micros(closed_form_us));
        // steps are back to back
        for w in steps.windows(2) {
            assert_eq!(w[0].finished_at, w[1].started_at);
        }
    }

    #[test]
    fn forward_stops_at_resident_or_unclaimable_chunk() {
        let chunks = split_into_chunks(4096, 512).unwrap();
        let mut e = engine(1.0);
        let steps = e.run_forward(&chunks, |c| c.index == 5, |_, _| true);
        assert_eq!(steps.iter().map(|s| s.chunk.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);

        let mut e = engine(1.0);
        let steps = e.run_forward(&chunks, |_| false, |c, _| c.index < 3);
        assert_eq!(steps.len(), 3);
    }

    #[test]
    #[should_panic(expected = "prefix dependency violated")]
    fn out_of_order_prefill_panics() {
        let chunks = split_into_chunks(2048, 512).unwrap();
        let mut e = engine(1.0);
        e.prefill_chunk(&chunks[1]);
    }

    #[test]
    #[should_panic(expected = "exceeds")]
    fn oversized_chunk_panics() {
        let chunks = split_into_chunks(2048, 1024).unwrap();
        let mut e = engine(1.0);
        e.prefill_chunk(&chunks[0]);
    }

    #[test]
    fn rejects_zero_power() {
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
        assert!(ComputeEngine::new(CostModel::new(1.0, 0.0), TokenBudget::with_share(0.0), ClockMode::Sim, clock).is_err());
    }
}

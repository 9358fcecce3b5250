use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Deserialize;

use super::claim::Side;
use crate::time::Micros;

/// Header of the per-chunk event log CSV.
pub const EVENT_LOG_HEADER: &str = "index,side,start_us,finish_us,bytes";
/// Header of the run summary CSV line.
pub const SUMMARY_HEADER: &str = "mode,n_chunks,ttft_us,merge_point,computed_fraction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cake,
    ComputeOnly,
    IoOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Cake, Mode::ComputeOnly, Mode::IoOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cake => "cake",
            Mode::ComputeOnly => "compute_only",
            Mode::IoOnly => "io_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cake" => Ok(Mode::Cake),
            "compute_only" => Ok(Mode::ComputeOnly),
            "io_only" => Ok(Mode::IoOnly),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// One chunk's provenance and timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkEvent {
    pub index: usize,
    pub side: Side,
    pub start: Micros,
    pub finish: Micros,
    /// KV bytes produced (compute) or encoded bytes moved (io).
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub n_chunks: usize,
    pub ttft: Micros,
    /// Lowest io-owned chunk index, or `n_chunks` if io owns none.
    pub merge_point: usize,
    pub computed_fraction: f64,
    /// Per-chunk records ordered by chunk index.
    pub events: Vec<ChunkEvent>,
    pub compute_busy: Micros,
    pub io_busy: Micros,
    /// When the compute side told the fetch worker to stop, if it did.
    pub stop_signal_at: Option<Micros>,
}

impl RunReport {
    pub(crate) fn from_events(mode: Mode, n_chunks: usize, mut events: Vec<ChunkEvent>, stop_signal_at: Option<Micros>) -> Self {
        events.sort_by_key(|e| e.index);
        let ttft = events.iter().map(|e| e.finish).max().unwrap_or(Micros::ZERO);
        let merge_point = events.iter().filter(|e| e.side == Side::Io).map(|e| e.index).min().unwrap_or(n_chunks);
        let busy = |side| events.iter().filter(|e| e.side == side).map(|e| e.finish - e.start).sum();
        RunReport {
            mode,
            n_chunks,
            ttft,
            merge_point,
            computed_fraction: merge_point as f64 / n_chunks as f64,
            compute_busy: busy(Side::Compute),
            io_busy: busy(Side::Io),
            events,
            stop_signal_at,
        }
    }

    pub fn ttft(&self) -> Micros {
        self.ttft
    }

    pub fn owner(&self, index: usize) -> Option<Side> {
        self.events.iter().find(|e| e.index == index).map(|e| e.side)
    }

    /// Checks that every chunk in `[0, n)` appears exactly once and that
    /// compute owns a prefix and io the matching suffix.
    pub fn check_coverage(&self) -> Result<(), String> {
        if self.events.len() != self.n_chunks {
            return Err(format!("{} events for {} chunks", self.events.len(), self.n_chunks));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.index != i {
                return Err(format!("chunk {i} missing or duplicated (found {})", e.index));
            }
            let expected = if i < self.merge_point { Side::Compute } else { Side::Io };
            if e.side != expected {
                return Err(format!("chunk {i} owned by {} across the merge point {}", e.side, self.merge_point));
            }
            if e.finish < e.start {
                return Err(format!("chunk {i} finishes before it starts"));
            }
        }
        Ok(())
    }

    pub fn write_event_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{EVENT_LOG_HEADER}")?;
        for e in &self.events {
            writeln!(out, "{},{},{},{},{}", e.index, e.side, e.start.0, e.finish.0, e.bytes)?;
        }
        Ok(())
    }

    pub fn summary_line(&self) -> String {
        format!("{},{},{},{},{:.6}", self.mode, self.n_chunks, self.ttft.0, self.merge_point, self.computed_fraction)
    }
}

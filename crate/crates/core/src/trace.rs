//! Piecewise-constant I/O bandwidth over time, and the fetch-latency law it
//! induces.
//!
//! Bandwidth is in megabits per second. One mbps moves exactly one bit per
//! microsecond, which keeps the integration in microseconds.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::time::Micros;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bandwidth trace is empty")]
    Empty,
    #[error("first breakpoint must be at t = 0, got {0} ms")]
    NonZeroStart(f64),
    #[error("breakpoint times must be strictly increasing (at {0} ms)")]
    NotIncreasing(f64),
    #[error("bandwidth must be positive and finite, got {0} mbps")]
    NonPositive(f64),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// One breakpoint: from `t_ms` onward the link delivers `mbps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub t_ms: f64,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    points: Vec<Breakpoint>,
}

impl BandwidthTrace {
    pub fn new(points: Vec<Breakpoint>) -> Result<Self, TraceError> {
        let first = points.first().ok_or(TraceError::Empty)?;
        if first.t_ms != 0.0 {
            return Err(TraceError::NonZeroStart(first.t_ms));
        }
        for w in points.windows(2) {
            if w[1].t_ms.partial_cmp(&w[0].t_ms) != Some(std::cmp::Ordering::Greater) {
                return Err(TraceError::NotIncreasing(w[1].t_ms));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.mbps > 0.0 && p.mbps.is_finite())) {
            return Err(TraceError::NonPositive(p.mbps));
        }
        Ok(BandwidthTrace { points })
    }

    pub fn constant(mbps: f64) -> Result<Self, TraceError> {
        Self::new(vec![Breakpoint { t_ms: 0.0, mbps }])
    }

    /// Builds a trace from `(t_ms, mbps)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, TraceError> {
        Self::new(pairs.iter().map(|&(t_ms, mbps)| Breakpoint { t_ms, mbps }).collect())
    }

    /// Reads a two-column `time_ms,mbps` CSV. A header row is optional.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut points = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(TraceError::BadRow { row, reason: format!("expected 2 columns, found {}", record.len()) });
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(t_ms), Ok(mbps)) => points.push(Breakpoint { t_ms, mbps }),
                // tolerate a header line
                _ if row == 0 => continue,
                _ => return Err(TraceError::BadRow { row, reason: format!("non-numeric values {:?}", record) }),
            }
        }
        Self::new(points)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path).map_err(csv::Error::from)?;
        Self::from_csv_reader(file)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.points
    }

    pub fn is_constant(&self) -> bool {
        self.points.len() == 1
    }

    /// Every bandwidth multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, TraceError> {
        Self::new(self.points.iter().map(|p| Breakpoint { t_ms: p.t_ms, mbps: p.mbps * factor }).collect())
    }

    /// Bandwidth in effect at `t_us`.
    pub fn mbps_at(&self, t_us: f64) -> f64 {
        self.points[self.segment_at(t_us)].mbps
    }

    fn segment_at(&self, t_us: f64) -> usize {
        let t_ms = t_us / 1000.0;
        self.points.partition_point(|p| p.t_ms <= t_ms).saturating_sub(1)
    }

    fn segment_end_us(&self, seg: usize) -> f64 {
        self.points.get(seg + 1).map_or(f64::INFINITY, |p| p.t_ms * 1000.0)
    }

    /// Bits the trace delivers over `[from_us, to_us]`.
    pub fn integral_bits(&self, from_us: f64, to_us: f64) -> f64 {
        if to_us <= from_us {
            return 0.0;
        }
        let mut total = 0.0;
        let mut t = from_us;
        let mut seg = self.segment_at(t);
        while t < to_us {
            let end = self.segment_end_us(seg).min(to_us);
            total += self.points[seg].mbps * (end - t);
            t = end;
            seg += 1;
        }
        total
    }

    /// Exact (fractional-µs) time needed to move `nbytes` starting at `start_us`.
    pub fn transfer_time_us(&self, nbytes: u64, start_us: f64) -> f64 {
        let mut remaining = nbytes as f64 * 8.0;
        let mut t = start_us;
        let mut seg = self.segment_at(t);
        loop {
            let rate = self.points[seg].mbps;
            let end = self.segment_end_us(seg);
            let capacity = rate * (end - t);
            if capacity >= remaining {
                return t + remaining / rate - start_us;
            }
            remaining -= capacity;
            t = end;
            seg += 1;
        }
    }
}

/// Smallest whole-µs duration after which the trace has delivered `nbytes`
/// starting at `start`. Position in the sequence plays no part.
pub fn fetch_latency(trace: &BandwidthTrace, nbytes: u64, start: Micros) -> Micros {
    let exact = trace.transfer_time_us(nbytes, start.0 as f64);
    // absorb float noise on results that are whole microseconds
    Micros((exact - 1e-6).ceil().max(0.0) as u64)
}

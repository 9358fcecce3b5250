use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::Deserialize;

use crate::time::Micros;

/// Which clock drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Deterministic virtual time; nothing sleeps.
    #[default]
    Sim,
    /// Real threads, real sleeps, real disk reads.
    Live,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(ClockMode::Sim),
            "live" => Ok(ClockMode::Live),
            other => Err(format!("unknown clock mode {other:?} (expected sim or live)")),
        }
    }
}

pub trait Clock: Send + Sync {
    /// Time since the clock's origin (request arrival).
    fn now(&self) -> Micros;
    /// Blocks (or jumps) until `t`; returns immediately if `t` has passed.
    fn sleep_until(&self, t: Micros);
}

/// Wall time measured from construction.
#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn start() -> Self {
        WallClock { origin: Instant::now() }
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }
}

impl Clock for WallClock {
    fn now(&self) -> Micros {
        Micros::from_duration(self.origin.elapsed())
    }

    fn sleep_until(&self, t: Micros) {
        let now = self.now();
        if t > now {
            std::thread::sleep((t - now).to_duration());
        }
    }
}

/// A monotone virtual clock; sleeping advances it.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now_us: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Micros {
        Micros(self.now_us.load(Ordering::Acquire))
    }

    fn sleep_until(&self, t: Micros) {
        self.now_us.fetch_max(t.0, Ordering::AcqRel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_only_moves_forward() {
        let c = VirtualClock::new();
        c.sleep_until(Micros(500));
        c.sleep_until(Micros(200));
        assert_eq!(c.now(), Micros(500));
    }

    #[test]
    fn wall_clock_sleeps() {
        let c = WallClock::start();
        c.sleep_until(Micros(2_000));
        assert!(c.now() >= Micros(2_000));
    }

    #[test]
    fn parse_mode() {
        assert_eq!("sim".parse::<ClockMode>().unwrap(), ClockMode::Sim);
        assert_eq!("live".parse::<ClockMode>().unwrap(), ClockMode::Live);
        assert!("fast".parse::<ClockMode>().is_err());
    }
}

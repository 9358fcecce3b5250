use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Compute,
    Io,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Compute => "compute",
            Side::Io => "io",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Side::Compute => 1,
            Side::Io => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Side> {
        match tag {
            1 => Some(Side::Compute),
            2 => Some(Side::Io),
            _ => None,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Snapshot of both pointers, in chunk units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointerState {
    /// Next chunk the compute side will claim.
    pub compute_ptr: usize,
    /// Next chunk the fetch side will claim; -1 once it has passed chunk 0.
    pub io_ptr: isize,
}

impl PointerState {
    pub fn crossed(&self) -> bool {
        self.compute_ptr as isize > self.io_ptr
    }
}

#[derive(Default)]
struct Slot {
    side: AtomicU8,
    at_us: AtomicU64,
}

/// Linearizable per-chunk ownership shared by the two workers.
///
/// Both pointers live in one atomic word (compute pointer in the low half, one
/// past the io pointer in the high half), so every claim is a single CAS and
/// concurrent attempts on the last free chunk have exactly one winner.
pub struct ClaimTable {
    bounds: AtomicU64,
    slots: Vec<Slot>,
}

fn pack(lo: u32, hi: u32) -> u64 {
    (hi as u64) << 32 | lo as u64
}

fn unpack(word: u64) -> (u32, u32) {
    (word as u32, (word >> 32) as u32)
}

impl ClaimTable {
    pub fn new(n_chunks: usize) -> Self {
        assert!(n_chunks < u32::MAX as usize, "too many chunks");
        ClaimTable { bounds: AtomicU64::new(pack(0, n_chunks as u32)), slots: (0..n_chunks).map(|_| Slot::default()).collect() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn pointers(&self) -> PointerState {
        let (lo, hi) = unpack(self.bounds.load(Ordering::Acquire));
        PointerState { compute_ptr: lo as usize, io_ptr: hi as isize - 1 }
    }

    /// Index `side` would claim next, or `None` once the pointers have crossed.
    pub fn next_for(&self, side: Side) -> Option<usize> {
        let (lo, hi) = unpack(self.bounds.load(Ordering::Acquire));
        (lo < hi).then(|| match side {
            Side::Compute => lo as usize,
            Side::Io => hi as usize - 1,
        })
    }

    /// Attempts to take `index` for `side`. Returns false once the pointers
    /// have crossed; the loser should stop.
    ///
    /// # Panics
    ///
    /// If `index` is not the chunk the side's pointer designates.
    pub fn claim(&self, side: Side, index: usize, at: Micros) -> bool {
        let mut current = self.bounds.load(Ordering::Acquire);
        loop {
            let (lo, hi) = unpack(current);
            if lo >= hi {
                return false;
            }
            let (expected, next) = match side {
                Side::Compute => (lo, pack(lo + 1, hi)),
                Side::Io => (hi - 1, pack(lo, hi - 1)),
            };
            assert_eq!(index, expected as usize, "{side} claimed chunk {index} but its pointer is at {expected}");
            match self.bounds.compare_exchange_weak(current, next, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => {
                    let slot = &self.slots[index];
                    slot.at_us.store(at.0, Ordering::Relaxed);
                    slot.side.store(side.tag(), Ordering::Release);
                    return true;
                }
                Err(actual) => current = actual,
            }
        }
    }

    pub fn claim_of(&self, index: usize) -> Option<(Side, Micros)> {
        let slot = &self.slots[index];
        Side::from_tag(slot.side.load(Ordering::Acquire)).map(|s| (s, Micros(slot.at_us.load(Ordering::Relaxed))))
    }

    pub fn all_claimed(&self) -> bool {
        self.pointers().crossed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn pointers_meet_in_the_middle() {
        let t = ClaimTable::new(4);
        assert_eq!(t.pointers(), PointerState { compute_ptr: 0, io_ptr: 3 });
        assert!(t.claim(Side::Compute, 0, Micros(0)));
        assert!(t.claim(Side::Io, 3, Micros(0)));
        assert!(t.claim(Side::Io, 2, Micros(25)));
        assert!(t.claim(Side::Compute, 1, Micros(10)));
        assert!(t.all_claimed());
        assert!(!t.claim(Side::Compute, 2, Micros(30)));
        assert!(!t.claim(Side::Io, 1, Micros(50)));
        assert_eq!(t.claim_of(2), Some((Side::Io, Micros(25))));
        assert_eq!(t.next_for(Side::Io), None);
        assert_eq!(t.pointers(), PointerState { compute_ptr: 2, io_ptr: 1 });
    }

    #[test]
    fn single_chunk_goes_to_first_claimer() {
        let t = ClaimTable::new(1);
        assert!(t.claim(Side::Io, 0, Micros(0)));
        assert!(!t.claim(Side::Compute, 0, Micros(0)));
        assert_eq!(t.claim_of(0).map(|c| c.0), Some(Side::Io));
    }

    #[test]
    #[should_panic(expected = "pointer is at")]
    fn non_adjacent_claim_panics() {
        let t = ClaimTable::new(5);
        t.claim(Side::Compute, 2, Micros(0));
    }

    #[test]
    fn concurrent_claims_are_exactly_once() {
        for _ in 0..200 {
            let n = 64;
            let t = Arc::new(ClaimTable::new(n));
            let worker = |side: Side, t: Arc<ClaimTable>| {
                std::thread::spawn(move || {
                    let mut won = Vec::new();
                    // each side's own pointer only moves under its own claims
                    while let Some(i) = t.next_for(side) {
                        if t.claim(side, i, Micros(0)) {
                            won.push(i);
                        }
                    }
                    won
                })
            };
            let c = worker(Side::Compute, t.clone());
            let io = worker(Side::Io, t.clone());
            let mut all: Vec<usize> = c.join().unwrap();
            all.extend(io.join().unwrap());
            all.sort();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}

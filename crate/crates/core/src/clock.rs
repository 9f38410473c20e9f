//! Injectable time source.
//!
//! Everything that stamps data (store nodes, observations, run timing)
//! takes a [`Clock`] so offline runs are bit-reproducible: the counter
//! variant hands out a strictly increasing sequence instead of wall time.

use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone)]
pub enum Clock {
    /// Real wall time in milliseconds since the epoch.
    System,
    /// Deterministic time: each read returns the current value and then
    /// advances it by `step_ms`.
    Counter { now_ms: u64, step_ms: u64 },
}

impl Clock {
    pub fn system() -> Self {
        Clock::System
    }

    /// Counter starting at zero, advancing 1 ms per read.
    pub fn counter() -> Self {
        Clock::Counter { now_ms: 0, step_ms: 1 }
    }

    pub fn counter_from(start_ms: u64, step_ms: u64) -> Self {
        Clock::Counter { now_ms: start_ms, step_ms }
    }

    pub fn now_ms(&mut self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Counter { now_ms, step_ms } => {
                let t = *now_ms;
                *now_ms += *step_ms;
                t
            }
        }
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::counter()
    }
}

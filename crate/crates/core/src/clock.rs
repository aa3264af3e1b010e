//! Time source abstraction.
//!
//! All timestamps and durations in run artifacts go through a [`Clock`] so
//! that runs driven by the scripted fake provider can be made byte-for-byte
//! reproducible: a [`FixedClock`] always reports the same instant, which
//! pins manifest timestamps and meter wall times across repeated runs.

use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    /// Current wall-clock time.
    fn now(&self) -> DateTime<Utc>;

    /// Milliseconds elapsed since `start`, as observed by this clock.
    fn elapsed_ms(&self, start: Instant) -> u64;
}

/// Real system time.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn elapsed_ms(&self, start: Instant) -> u64 {
        start.elapsed().as_millis() as u64
    }
}

/// A clock frozen at one instant; every duration it measures is zero.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl FixedClock {
    /// The conventional frozen instant used by deterministic fixture runs.
    pub fn epoch() -> Self {
        FixedClock(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }

    fn elapsed_ms(&self, _start: Instant) -> u64 {
        0
    }
}

pub type SharedClock = Arc<dyn Clock>;

pub fn system_clock() -> SharedClock {
    Arc::new(SystemClock)
}

pub fn fixed_clock() -> SharedClock {
    Arc::new(FixedClock::epoch())
}

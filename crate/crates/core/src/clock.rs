//! Injected time sources.
//!
//! All engine timestamps are milliseconds. The virtual clock only moves when
//! the engine advances it, which keeps deadline behaviour and traces
//! reproducible; the wall clock sleeps to reach a requested instant.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Milliseconds since the clock's origin.
pub type Timestamp = u64;

pub trait Clock: Send {
    fn now(&self) -> Timestamp;

    /// Move time forward to at least `t`. Never moves backwards.
    fn advance_to(&mut self, t: Timestamp);

    /// Wall time in ms since the unix epoch, for clocks that have one.
    fn wall_ms(&self) -> Option<u64> {
        None
    }
}

#[derive(Clone, Debug, Default)]
pub struct VirtualClock {
    now: Timestamp,
}

impl VirtualClock {
    pub fn new(start: Timestamp) -> Self {
        Self { now: start }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        self.now
    }

    fn advance_to(&mut self, t: Timestamp) {
        self.now = self.now.max(t);
    }
}

/// Monotonic wall clock; `advance_to` sleeps until the instant is reached.
#[derive(Clone, Debug)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        self.origin.elapsed().as_millis() as Timestamp
    }

    fn advance_to(&mut self, t: Timestamp) {
        let now = self.now();
        if t > now {
            std::thread::sleep(Duration::from_millis(t - now));
        }
    }

    fn wall_ms(&self) -> Option<u64> {
        SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_millis() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_monotone() {
        let mut clock = VirtualClock::new(100);
        clock.advance_to(250);
        assert_eq!(clock.now(), 250);
        clock.advance_to(10);
        assert_eq!(clock.now(), 250);
        assert_eq!(clock.wall_ms(), None);
    }
}

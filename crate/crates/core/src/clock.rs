//! Experiment clocks. All times are milliseconds from the clock origin.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;

    /// Block (wall clock) or jump (virtual clock) until `t_ms`. Never moves
    /// a clock backwards.
    fn sleep_until(&self, t_ms: u64);

    fn is_virtual(&self) -> bool;
}

/// Controllable clock shared by schedules, telemetry and the emulator so runs
/// are exactly reproducible and faster than real time.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance_to(&self, t_ms: u64) {
        self.now.fetch_max(t_ms, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, t_ms: u64) {
        self.advance_to(t_ms);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_until(&self, t_ms: u64) {
        let target = self.origin + Duration::from_millis(t_ms);
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
    }

    fn is_virtual(&self) -> bool {
        false
    }
}

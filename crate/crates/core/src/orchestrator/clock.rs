use std::time::{Duration, Instant};

/// Observer time since the start of an episode.
pub trait Clock {
    fn now(&self) -> Duration;
    /// Moves time forward to `t` (no-op if already past it).
    fn advance_to(&mut self, t: Duration);
}

/// Deterministic clock driven entirely by the caller.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Duration,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&mut self, by: Duration) {
        self.now += by;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        self.now
    }

    fn advance_to(&mut self, t: Duration) {
        self.now = self.now.max(t);
    }
}

#[derive(Debug, Clone)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn start() -> Self {
        WallClock { start: Instant::now() }
    }
}

impl Clock for WallClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn advance_to(&mut self, t: Duration) {
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
    }
}

/// First multiple of `period` at or after `t`.
pub fn next_tick(t: Duration, period: Duration) -> Duration {
    let p = period.as_nanos();
    if p == 0 {
        return t;
    }
    let n = t.as_nanos().div_ceil(p);
    Duration::from_nanos((n * p) as u64)
}

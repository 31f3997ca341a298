//! Virtual time.
//!
//! Virtual milliseconds advance `time_scale` times faster than wall time.
//! The clock is built on `tokio::time`, so tests running on a paused runtime
//! get fully deterministic virtual time.

use std::time::Duration;

use tokio::time::Instant;

#[derive(Debug, Clone, Copy)]
pub struct VirtualClock {
    wall_origin: Instant,
    virtual_origin_ms: u64,
    time_scale: f64,
}

impl VirtualClock {
    /// A clock reading `start_ms` now and advancing `time_scale` virtual
    /// milliseconds per wall millisecond.
    pub fn new(start_ms: u64, time_scale: f64) -> Self {
        assert!(time_scale > 0.0 && time_scale.is_finite(), "time_scale must be positive");
        VirtualClock {
            wall_origin: Instant::now(),
            virtual_origin_ms: start_ms,
            time_scale,
        }
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn now_ms(&self) -> u64 {
        let wall_ms = self.wall_origin.elapsed().as_secs_f64() * 1000.0;
        self.virtual_origin_ms + (wall_ms * self.time_scale) as u64
    }

    /// Wall-clock instant at which the clock reads `virtual_ms`.
    pub fn instant_at(&self, virtual_ms: u64) -> Instant {
        let ahead = virtual_ms.saturating_sub(self.virtual_origin_ms) as f64;
        // Round up so that `now_ms()` is at least `virtual_ms` on wake-up.
        let wall = Duration::from_secs_f64(ahead / self.time_scale / 1000.0) + Duration::from_micros(1);
        self.wall_origin + wall
    }

    pub async fn sleep_until(&self, virtual_ms: u64) {
        tokio::time::sleep_until(self.instant_at(virtual_ms)).await;
    }

    /// Wall duration of `virtual_ms` virtual milliseconds.
    pub fn wall_duration(&self, virtual_ms: u64) -> Duration {
        Duration::from_secs_f64(virtual_ms as f64 / self.time_scale / 1000.0)
    }
}

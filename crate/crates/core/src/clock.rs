//! Process-wide monotonic nanosecond clock.
//!
//! Timestamps from different processes are never compared: response times use
//! the client's clock only and processing times the server's clock only.

use std::sync::OnceLock;
use std::time::Instant;

fn epoch() -> Instant {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    *EPOCH.get_or_init(Instant::now)
}

/// Nanoseconds elapsed since the first call in this process.
pub fn now_ns() -> u64 {
    epoch().elapsed().as_nanos() as u64
}

/// Converts a clock reading back to an `Instant`, for absolute-deadline sleeps.
pub fn instant_at(ns: u64) -> Instant {
    epoch() + std::time::Duration::from_nanos(ns)
}

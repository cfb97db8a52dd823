use serde::{Deserialize, Serialize};

/// A change reported by one of the online detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Data index (seq) of the sample that triggered the alarm.
    pub detection_seq: u64,
    /// Data index reported as the change point.
    pub cp_estimate: u64,
    /// Monotonic timestamp of the decision, see [`crate::clock`].
    pub wall_detect_ns: u64,
    pub statistic_value: f64,
    /// Set when the detector had to fall back to a simpler model for the
    /// window that produced this event (pCUSUM fit failure).
    #[serde(default)]
    pub fallback: bool,
}

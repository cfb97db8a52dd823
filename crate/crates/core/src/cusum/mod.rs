//! Windowed sequential CUSUM.
//!
//! A training window of `m` change-free samples fixes the baseline mean and a
//! Bartlett long-run variance estimate. The next `l` samples are monitored
//! with
//!
//! ```text
//! D(m, t) = sum_{j=m+1}^{m+t} y_j - (t/m) sum_{j=1}^{m} y_j
//! alarm   iff |D(m, t)| / omega_m >= cv * sqrt(m) (1 + t/m) (t/(m+t))^gamma
//! ```
//!
//! where `cv` is the (1 - alpha) quantile of `sup_{0<u<=1} W(u)/u^gamma`.
//! When the window is exhausted, or after an alarm, the detector re-trains on
//! the most recent `m` samples once the offline test accepts them.

mod calibration;
mod lrv;
mod monitor;
mod offline;
mod procedure;

pub use calibration::{calibrate_cv, kolmogorov_quantile, CvCache, CvKey};
pub use lrv::{bartlett_lrv, default_bartlett_window, LRV_FLOOR};
pub use monitor::{start_monitoring, threshold_at, CusumState, StepOutcome};
pub use offline::{offline_cp_test, OfflineChange, MIN_OFFLINE_LEN};
pub use procedure::{run_windowed_procedure, run_with, Identity, Preprocessor, WindowedCusum};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    OneSided,
    #[default]
    TwoSided,
}

impl Sidedness {
    pub fn as_str(self) -> &'static str {
        match self {
            Sidedness::OneSided => "one-sided",
            Sidedness::TwoSided => "two-sided",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one-sided" | "one" => Ok(Sidedness::OneSided),
            "two-sided" | "two" => Ok(Sidedness::TwoSided),
            other => Err(Error::Config(format!("unknown sidedness {other:?}"))),
        }
    }
}

/// Tuning of the windowed CUSUM. Defaults follow the reference experiment:
/// alpha = 0.05, gamma = 0.25, m = 100, l = 50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CusumConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Training length `m`.
    pub training_len: usize,
    /// Monitoring window length `l`.
    pub window_len: usize,
    pub bartlett_window: usize,
    pub sidedness: Sidedness,
    /// Brownian grid resolution for the critical value.
    pub cv_grid: usize,
    pub cv_replications: usize,
    pub cv_seed: u64,
}

impl Default for CusumConfig {
    fn default() -> Self {
        CusumConfig {
            alpha: 0.05,
            gamma: 0.25,
            training_len: 100,
            window_len: 50,
            bartlett_window: default_bartlett_window(100),
            sidedness: Sidedness::TwoSided,
            cv_grid: 10_000,
            cv_replications: 100_000,
            cv_seed: 0xC05_0,
        }
    }
}

impl CusumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 0.5) {
            return Err(Error::Config(format!("gamma {} not in [0, 0.5)", self.gamma)));
        }
        if self.training_len == 0 || self.window_len == 0 || self.bartlett_window == 0 {
            return Err(Error::Config("m, l and the Bartlett window must be positive".into()));
        }
        if self.training_len < 2 * self.bartlett_window {
            return Err(Error::Config(format!(
                "training length {} < 2 x Bartlett window {}",
                self.training_len, self.bartlett_window
            )));
        }
        if self.training_len < MIN_OFFLINE_LEN {
            return Err(Error::Config(format!(
                "training length {} below the offline test minimum {MIN_OFFLINE_LEN}",
                self.training_len
            )));
        }
        Ok(())
    }

    pub fn cv_key(&self) -> CvKey {
        CvKey::new(
            self.gamma,
            self.alpha,
            self.sidedness,
            self.cv_grid,
            self.cv_replications,
            self.cv_seed,
        )
    }
}

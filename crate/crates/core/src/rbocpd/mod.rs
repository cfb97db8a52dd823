//! Restarted Bayesian online change-point detection on Bernoulli streams.
//!
//! A [`ForecasterBank`] holds one Laplace forecaster per hypothesised change
//! start `s >= r`. A change is declared as soon as a forecaster started after
//! the origin `r` outweighs the origin, after which the bank restarts at
//! `t + 1`. Real-valued streams are mapped to bits through the empirical CDF
//! of a training window; `n` independently randomized runs are combined by a
//! stopping rule into a single detection.

mod bank;
mod binarize;
mod stopping;

pub use bank::{
    change_criterion, laplace_predict, run_single, update_bank, ForecasterBank, RunDetection, SingleRun,
};
pub use binarize::{binarize_step, BinarizationMode, BinarizationSpec, CDF_EPS, MIN_BINARIZATION_TRAINING};
pub use stopping::{
    detect_all_with_stopping, detect_with_stopping, run_timelines, write_timelines, Aggregator, RbocpdDetector,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior weight `eta(r, s, t)` of the hypothesis "last change at `s`".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hazard {
    /// `eta = 1 / (t - s + 1)`.
    InverseRunLength,
    /// `eta = 1` for the origin and `h` for every later start.
    Constant(f64),
}

impl Default for Hazard {
    fn default() -> Self {
        Hazard::Constant(1e-3)
    }
}

impl Hazard {
    pub fn log_eta(self, r: u64, s: u64, t: u64) -> f64 {
        match self {
            Hazard::InverseRunLength => -((t - s + 1) as f64).ln(),
            Hazard::Constant(h) => {
                if s == r {
                    0.0
                } else {
                    h.ln()
                }
            }
        }
    }

    /// `ln(eta(r, s, t) / eta(r, s, t - 1))` for `s < t`.
    pub fn log_ratio(self, r: u64, s: u64, t: u64) -> f64 {
        match self {
            Hazard::InverseRunLength => ((t - s) as f64 / (t - s + 1) as f64).ln(),
            Hazard::Constant(_) => {
                let _ = r;
                0.0
            }
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Hazard::Constant(h) if !(h > 0.0 && h <= 1.0) => {
                Err(Error::Config(format!("constant hazard {h} not in (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingMode {
    /// Fire once the fraction of runs that detected since the last alarm
    /// exceeds `q`.
    #[default]
    DetectionFraction,
    /// Fire once `sum(latest location) / n > q * t`, both measured from the
    /// last alarm.
    LocationMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbocpdConfig {
    pub n_runs: usize,
    pub q_weight: f64,
    pub hazard: Hazard,
    /// Index of the first sample.
    pub restart_origin: u64,
    pub stopping_mode: StoppingMode,
    pub binarization: BinarizationMode,
    /// Samples used to build the binarization CDF.
    pub training_len: usize,
    pub seed: u64,
}

impl Default for RbocpdConfig {
    fn default() -> Self {
        RbocpdConfig {
            n_runs: 100,
            q_weight: 0.95,
            hazard: Hazard::default(),
            restart_origin: 1,
            stopping_mode: StoppingMode::default(),
            binarization: BinarizationMode::default(),
            training_len: 100,
            seed: 0xB0CD,
        }
    }
}

impl RbocpdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if !(self.q_weight > 0.0 && self.q_weight < 1.0) {
            return Err(Error::Config(format!("q_weight {} not in (0, 1)", self.q_weight)));
        }
        if self.restart_origin == 0 {
            return Err(Error::Config("restart_origin must be positive".into()));
        }
        if self.training_len < MIN_BINARIZATION_TRAINING {
            return Err(Error::Config(format!(
                "training_len {} below {MIN_BINARIZATION_TRAINING}",
                self.training_len
            )));
        }
        self.hazard.validate()?;
        if self.binarization == BinarizationMode::ThresholdMedian && self.n_runs > 1 {
            log::warn!("threshold-median binarization makes all {} runs identical", self.n_runs);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hazard_serde_forms() {
        let h: Hazard = serde_json::from_str("\"inverse-run-length\"").unwrap();
        assert_eq!(h, Hazard::InverseRunLength);
        let h: Hazard = serde_json::from_str("{\"constant\":0.01}").unwrap();
        assert_eq!(h, Hazard::Constant(0.01));
    }

    #[test]
    fn config_checks() {
        assert!(RbocpdConfig::default().validate().is_ok());
        assert!(RbocpdConfig { n_runs: 0, ..Default::default() }.validate().is_err());
        assert!(RbocpdConfig { q_weight: 1.0, ..Default::default() }.validate().is_err());
        assert!(RbocpdConfig { hazard: Hazard::Constant(0.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn inverse_ratio_matches_eta() {
        let h = Hazard::InverseRunLength;
        let lhs = h.log_ratio(1, 3, 10);
        let rhs = h.log_eta(1, 3, 10) - h.log_eta(1, 3, 9);
        assert!((lhs - rhs).abs() < 1e-15);
    }
}

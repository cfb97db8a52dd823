use super::lrv::bartlett_lrv;
use super::offline::offline_cp_test;
use super::{CusumConfig, Sidedness};
use crate::clock;
use crate::error::{Error, Result};
use crate::event::DetectionEvent;
use crate::series::Sample;

/// Boundary `cv * sqrt(m) * (1 + t/m) * (t/(m+t))^gamma`.
pub fn threshold_at(t: usize, m: usize, gamma: f64, cv: f64) -> f64 {
    let (t, m) = (t as f64, m as f64);
    cv * m.sqrt() * (1.0 + t / m) * (t / (m + t)).powf(gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Continue { statistic: f64 },
    Detected(DetectionEvent),
}

/// Monitoring state after a validated training window.
#[derive(Debug, Clone)]
pub struct CusumState {
    pub training_mean: f64,
    training_sum: f64,
    /// Long-run variance estimate `omega_m^2`.
    pub lrv: f64,
    omega: f64,
    /// Number of monitored samples so far.
    pub t: usize,
    pub cumulative_post_sum: f64,
    pub cv: f64,
    m: usize,
    sidedness: Sidedness,
    /// Precomputed boundary for t = 1..=l.
    thresholds: Vec<f64>,
}

impl CusumState {
    /// Validates `training` with the offline test and starts monitoring.
    pub fn start(training: &[f64], config: &CusumConfig, cv: f64) -> Result<Self> {
        if training.len() != config.training_len {
            return Err(Error::Config(format!(
                "training window has {} samples, expected m = {}",
                training.len(),
                config.training_len
            )));
        }
        if let Some(cp) = offline_cp_test(training, config.alpha)? {
            return Err(Error::TrainingInvalid { cp_index: cp.index });
        }
        Self::start_unchecked(training, config, cv)
    }

    /// Starts monitoring without the offline test (the caller validated the
    /// window, possibly on a different representation of the same data).
    pub fn start_unchecked(training: &[f64], config: &CusumConfig, cv: f64) -> Result<Self> {
        config.validate()?;
        if !(cv > 0.0 && cv.is_finite()) {
            return Err(Error::Config(format!("critical value must be positive, got {cv}")));
        }
        let m = training.len();
        let lrv = bartlett_lrv(training, config.bartlett_window)?;
        let training_sum: f64 = training.iter().sum();
        let thresholds = (1..=config.window_len)
            .map(|t| threshold_at(t, m, config.gamma, cv))
            .collect();
        Ok(CusumState {
            training_mean: training_sum / m as f64,
            training_sum,
            lrv,
            omega: lrv.sqrt(),
            t: 0,
            cumulative_post_sum: 0.0,
            cv,
            m,
            sidedness: config.sidedness,
            thresholds,
        })
    }

    pub fn window_len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.t >= self.thresholds.len()
    }

    /// Processes one monitoring sample in O(1).
    pub fn step(&mut self, sample: Sample) -> Result<StepOutcome> {
        if self.is_exhausted() {
            return Err(Error::WindowExhausted(self.t));
        }
        self.t += 1;
        self.cumulative_post_sum += sample.value;
        let d = self.cumulative_post_sum - self.t as f64 / self.m as f64 * self.training_sum;
        let statistic = match self.sidedness {
            Sidedness::OneSided => d / self.omega,
            Sidedness::TwoSided => d.abs() / self.omega,
        };
        if statistic >= self.thresholds[self.t - 1] {
            Ok(StepOutcome::Detected(DetectionEvent {
                detection_seq: sample.seq,
                cp_estimate: sample.seq,
                wall_detect_ns: clock::now_ns(),
                statistic_value: statistic,
                fallback: false,
            }))
        } else {
            Ok(StepOutcome::Continue { statistic })
        }
    }
}

/// Free-function form of [`CusumState::start`].
pub fn start_monitoring(training: &[f64], config: &CusumConfig, cv: f64) -> Result<CusumState> {
    CusumState::start(training, config, cv)
}

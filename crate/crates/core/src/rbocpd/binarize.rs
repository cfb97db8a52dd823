use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest training sample the empirical CDF is built from.
pub const MIN_BINARIZATION_TRAINING: usize = 30;
/// CDF values are clamped to `[CDF_EPS, 1 - CDF_EPS]`.
pub const CDF_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinarizationMode {
    /// `b_t ~ Bernoulli(F(y_t))`.
    #[default]
    Randomized,
    /// `b_t = [y_t > median]`.
    ThresholdMedian,
}

/// Maps real observations to bits through the empirical CDF of a training
/// window.
#[derive(Debug, Clone)]
pub struct BinarizationSpec {
    sorted: Vec<f64>,
    median: f64,
    pub mode: BinarizationMode,
}

impl BinarizationSpec {
    pub fn from_training(training: &[f64], mode: BinarizationMode) -> Result<Self> {
        if training.len() < MIN_BINARIZATION_TRAINING {
            return Err(Error::Config(format!(
                "binarization needs at least {MIN_BINARIZATION_TRAINING} training samples, got {}",
                training.len()
            )));
        }
        if training.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite training value".into()));
        }
        let mut sorted = training.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Ok(BinarizationSpec { sorted, median, mode })
    }

    pub fn median(&self) -> f64 {
        self.median
    }

    /// Clamped empirical CDF.
    pub fn cdf(&self, y: f64) -> f64 {
        let below = self.sorted.partition_point(|&x| x <= y);
        (below as f64 / self.sorted.len() as f64).clamp(CDF_EPS, 1.0 - CDF_EPS)
    }

    /// Randomized mode draws exactly one uniform per call; threshold mode
    /// draws none.
    pub fn binarize(&self, y: f64, rng: &mut impl Rng) -> bool {
        match self.mode {
            BinarizationMode::Randomized => rng.random::<f64>() < self.cdf(y),
            BinarizationMode::ThresholdMedian => y > self.median,
        }
    }
}

pub fn binarize_step(spec: &BinarizationSpec, y: f64, rng: &mut impl Rng) -> bool {
    spec.binarize(y, rng)
}

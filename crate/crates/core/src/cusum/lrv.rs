use crate::error::{Error, Result};
use crate::series::empirical_autocovariance;

/// Estimates at or below this are treated as degenerate (constant data).
pub const LRV_FLOOR: f64 = 1e-12;

/// Newey-West rule of thumb `floor(4 (n/100)^(2/9))`, at least 1.
pub fn default_bartlett_window(n: usize) -> usize {
    ((4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize).max(1)
}

/// Bartlett-kernel long-run variance
/// `k_0 + 2 sum_{j=1}^{W-1} (1 - j/W) k_j` with biased autocovariances `k_j`.
pub fn bartlett_lrv(training: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Config("Bartlett window must be at least 1".into()));
    }
    if training.len() < 2 * window {
        return Err(Error::Config(format!(
            "Bartlett window {window} needs at least {} samples, got {}",
            2 * window,
            training.len()
        )));
    }
    let w = window as f64;
    let mut lrv = empirical_autocovariance(training, 0)?;
    for j in 1..window {
        lrv += 2.0 * (1.0 - j as f64 / w) * empirical_autocovariance(training, j)?;
    }
    if !(lrv > LRV_FLOOR) {
        return Err(Error::DegenerateVariance(lrv));
    }
    Ok(lrv)
}

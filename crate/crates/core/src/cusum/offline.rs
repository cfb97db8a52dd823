use super::calibration::kolmogorov_quantile;
use super::lrv::{bartlett_lrv, default_bartlett_window};
use crate::error::{Error, Result};

pub const MIN_OFFLINE_LEN: usize = 20;

/// A change found by [`offline_cp_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineChange {
    /// 1-based position of the first sample after the break.
    pub index: usize,
    /// `max_k |S_k - (k/n) S_n| / (omega sqrt(n))`.
    pub statistic: f64,
}

/// Retrospective CUSUM test for a single mean change in `segment`.
///
/// The maximal centered partial sum, normalized by the Bartlett long-run
/// standard deviation, is compared with the `(1 - alpha)` quantile of the
/// supremum of a Brownian bridge.
pub fn offline_cp_test(segment: &[f64], alpha: f64) -> Result<Option<OfflineChange>> {
    let n = segment.len();
    if n < MIN_OFFLINE_LEN {
        return Err(Error::Config(format!(
            "offline test needs at least {MIN_OFFLINE_LEN} samples, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} not in (0, 1)")));
    }
    let omega = bartlett_lrv(segment, default_bartlett_window(n))?.sqrt();
    let total: f64 = segment.iter().sum();
    let nf = n as f64;
    let mut partial = 0.0;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &y) in segment.iter().enumerate().take(n - 1) {
        partial += y;
        let dev = (partial - (k + 1) as f64 / nf * total).abs();
        if dev > best.1 {
            best = (k + 1, dev);
        }
    }
    let statistic = best.1 / (omega * nf.sqrt());
    if statistic > kolmogorov_quantile(alpha) {
        Ok(Some(OfflineChange { index: best.0 + 1, statistic }))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{generate_arma, GeneratorSpec};

    #[test]
    fn step_is_located() {
        let mut seg = vec![0.0; 100];
        seg.extend(std::iter::repeat(1.0).take(100));
        let cp = offline_cp_test(&seg, 0.05).unwrap().expect("step must be detected");
        assert!((95..=105).contains(&cp.index), "{cp:?}");
    }

    #[test]
    fn size_under_the_null() {
        let sims = 1000;
        let rejections = (0..sims)
            .filter(|&i| {
                let ts = generate_arma(&GeneratorSpec::white_noise(200, 10_000 + i)).unwrap();
                offline_cp_test(&ts.values, 0.05).unwrap().is_some()
            })
            .count();
        let rate = rejections as f64 / sims as f64;
        assert!((rate - 0.05).abs() <= 0.03, "rejection rate {rate}");
    }

    #[test]
    fn constant_segment_is_degenerate() {
        assert!(matches!(offline_cp_test(&[3.0; 50], 0.05), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn short_segment_rejected() {
        assert!(matches!(offline_cp_test(&[1.0, 2.0], 0.05), Err(Error::Config(_))));
    }
}

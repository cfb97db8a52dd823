//! Synthetic series generation and shared statistical primitives.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// One observation of a stream. `seq` starts at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub seq: u64,
    pub value: f64,
}

fn default_burn_in() -> usize {
    500
}

fn default_std() -> f64 {
    1.0
}

/// ARMA(p, q) generator with Gaussian innovations:
/// `y_t = sum_j ar[j] y_{t-j} + e_t + sum_j ma[j] e_{t-j}`, `e_t ~ N(0, std^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub ar: Vec<f64>,
    #[serde(default)]
    pub ma: Vec<f64>,
    #[serde(default = "default_std")]
    pub innovation_std: f64,
    pub length: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GeneratorSpec {
    /// ARMA(1,1) with phi = 0.4, theta = 0.2 and T = 500.
    fn default() -> Self {
        GeneratorSpec {
            ar: vec![0.4],
            ma: vec![0.2],
            innovation_std: 1.0,
            length: 500,
            burn_in: default_burn_in(),
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn white_noise(length: usize, seed: u64) -> Self {
        GeneratorSpec { ar: vec![], ma: vec![], length, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.innovation_std > 0.0 && self.innovation_std.is_finite()) {
            return Err(Error::Config(format!(
                "innovation_std must be positive, got {}",
                self.innovation_std
            )));
        }
        if self.length == 0 {
            return Err(Error::Config("length must be positive".into()));
        }
        if !is_stationary(&self.ar) {
            return Err(Error::Config(format!("AR coefficients {:?} are not stationary", self.ar)));
        }
        if self.ma.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("MA coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Ground-truth mean shift starting at `t_cp` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpInjection {
    pub t_cp: usize,
    pub mean_shift: f64,
}

/// A finite real-valued stream plus its generation metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    /// Injected changes in increasing `t_cp` order.
    #[serde(default)]
    pub change_points: Vec<CpInjection>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

impl TimeSeries {
    pub fn from_values(values: Vec<f64>) -> Self {
        TimeSeries { values, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &value)| Sample { seq: i as u64 + 1, value })
    }

    /// Location of the first injected change, if any.
    pub fn first_cp(&self) -> Option<usize> {
        self.change_points.first().map(|c| c.t_cp)
    }
}

/// Levinson step-down test: the AR polynomial `1 - sum ar_j z^j` has all roots
/// outside the unit circle iff every reflection coefficient has modulus < 1.
pub fn is_stationary(ar: &[f64]) -> bool {
    match reflection_coefficients(ar) {
        Some(k) => k.iter().all(|k| k.abs() < 1.0),
        None => false,
    }
}

/// MA polynomial `1 + sum ma_j z^j` has all roots outside the unit circle.
pub fn is_invertible(ma: &[f64]) -> bool {
    let neg: Vec<f64> = ma.iter().map(|c| -c).collect();
    is_stationary(&neg)
}

/// Reflection (partial autocorrelation) coefficients of an AR polynomial,
/// `None` if a coefficient reaches the unit circle mid-recursion.
pub fn reflection_coefficients(ar: &[f64]) -> Option<Vec<f64>> {
    if ar.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let mut a = ar.to_vec();
    let mut out = vec![0.0; ar.len()];
    for k in (0..a.len()).rev() {
        let kappa = a[k];
        out[k] = kappa;
        if kappa.abs() >= 1.0 {
            return None;
        }
        let denom = 1.0 - kappa * kappa;
        let prev: Vec<f64> = (0..k).map(|j| (a[j] + kappa * a[k - 1 - j]) / denom).collect();
        a.truncate(k);
        a.copy_from_slice(&prev);
    }
    Some(out)
}

/// Inverse of [`reflection_coefficients`].
pub fn ar_from_reflection(kappa: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(kappa.len());
    for &k in kappa {
        let prev = a.clone();
        let n = prev.len();
        for j in 0..n {
            a[j] = prev[j] - k * prev[n - 1 - j];
        }
        a.push(k);
    }
    a
}

/// Simulates `spec.length` samples after discarding `spec.burn_in` warm-up
/// samples. The recursion starts from an all-zero state.
pub fn generate_arma(spec: &GeneratorSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let mut rng = seed::rng_for(spec.seed, &[0x5EED]);
    let p = spec.ar.len();
    let q = spec.ma.len();
    let total = spec.burn_in + spec.length;
    let mut y = vec![0.0; total];
    let mut e = vec![0.0; total];
    for t in 0..total {
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * spec.innovation_std;
        e[t] = eps;
        let mut v = eps;
        for j in 1..=p.min(t) {
            v += spec.ar[j - 1] * y[t - j];
        }
        for j in 1..=q.min(t) {
            v += spec.ma[j - 1] * e[t - j];
        }
        y[t] = v;
    }
    Ok(TimeSeries {
        values: y.split_off(spec.burn_in),
        change_points: Vec::new(),
        generator: Some(spec.clone()),
    })
}

/// Adds `inj.mean_shift` to every sample with `seq >= inj.t_cp`.
///
/// A zero shift leaves the values untouched and records no change point.
pub fn inject_mean_shift(mut ts: TimeSeries, inj: CpInjection) -> Result<TimeSeries> {
    if inj.t_cp <= 1 || inj.t_cp > ts.len() {
        return Err(Error::Config(format!(
            "t_cp = {} outside (1, {}]",
            inj.t_cp,
            ts.len()
        )));
    }
    if !inj.mean_shift.is_finite() {
        return Err(Error::Config("mean shift must be finite".into()));
    }
    if inj.mean_shift == 0.0 {
        return Ok(ts);
    }
    for v in &mut ts.values[inj.t_cp - 1..] {
        *v += inj.mean_shift;
    }
    ts.change_points.push(inj);
    ts.change_points.sort_by_key(|c| c.t_cp);
    Ok(ts)
}

/// Generates a series and applies every injection in order.
pub fn generate_with_changes(spec: &GeneratorSpec, changes: &[CpInjection]) -> Result<TimeSeries> {
    changes.iter().try_fold(generate_arma(spec)?, |ts, &c| inject_mean_shift(ts, c))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Biased (1/n) sample autocovariance at `lag`.
pub fn empirical_autocovariance(values: &[f64], lag: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("autocovariance of an empty series".into()));
    }
    if lag >= values.len() {
        return Err(Error::Domain(format!("lag {lag} >= length {}", values.len())));
    }
    let n = values.len();
    let m = mean(values);
    let s: f64 = values[..n - lag]
        .iter()
        .zip(&values[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    Ok(s / n as f64)
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SeriesMeta {
    #[serde(default)]
    change_points: Vec<CpInjection>,
    #[serde(default)]
    generator: Option<GeneratorSpec>,
}

/// Sidecar path for a series CSV: `series.csv` -> `series.meta.toml`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

impl TimeSeries {
    /// Writes `seq,value` rows plus a TOML metadata sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seq", "value"])?;
        for s in self.samples() {
            w.write_record([s.seq.to_string(), s.value.to_string()])?;
        }
        w.flush()?;
        let meta = SeriesMeta {
            change_points: self.change_points.clone(),
            generator: self.generator.clone(),
        };
        fs::write(meta_path(path), toml::to_string(&meta)?)?;
        Ok(())
    }

    /// Reads a `seq,value` CSV; the sidecar is optional.
    pub fn read_csv(path: &Path) -> Result<TimeSeries> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "seq" || &headers[1] != "value" {
            return Err(Error::Decode {
                line: headers.iter().collect::<Vec<_>>().join(","),
                reason: "expected header `seq,value`".into(),
            });
        }
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let seq: u64 = rec[0].trim().parse().map_err(|_| bad_row(&rec, "seq"))?;
            if seq != i as u64 + 1 {
                return Err(Error::Decode {
                    line: rec.iter().collect::<Vec<_>>().join(","),
                    reason: format!("expected seq {}", i + 1),
                });
            }
            values.push(rec[1].trim().parse().map_err(|_| bad_row(&rec, "value"))?);
        }
        let meta_file = meta_path(path);
        let meta: SeriesMeta = if meta_file.exists() {
            toml::from_str(&fs::read_to_string(meta_file)?)?
        } else {
            SeriesMeta::default()
        };
        Ok(TimeSeries { values, change_points: meta.change_points, generator: meta.generator })
    }
}

fn bad_row(rec: &csv::StringRecord, field: &str) -> Error {
    Error::Decode {
        line: rec.iter().collect::<Vec<_>>().join(","),
        reason: format!("unparsable {field}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn variance(v: &[f64]) -> f64 {
        empirical_autocovariance(v, 0).unwrap()
    }

    #[test]
    fn white_noise_variance() {
        let ts = generate_arma(&GeneratorSpec::white_noise(100_000, 3)).unwrap();
        assert_eq!(ts.len(), 100_000);
        assert!((variance(&ts.values) - 1.0).abs() < 0.02);
    }

    #[test]
    fn arma11_variance_matches_closed_form() {
        // sigma^2 (1 + 2 phi theta + theta^2) / (1 - phi^2)
        let closed = (1.0 + 2.0 * 0.4 * 0.2 + 0.04) / (1.0 - 0.16);
        let spec = GeneratorSpec { length: 100_000, seed: 11, ..Default::default() };
        let ts = generate_arma(&spec).unwrap();
        let v = variance(&ts.values);
        assert!((v / closed - 1.0).abs() < 0.03, "{v} vs {closed}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec { seed: 42, ..Default::default() };
        assert_eq!(generate_arma(&spec).unwrap(), generate_arma(&spec).unwrap());
        let other = GeneratorSpec { seed: 43, ..Default::default() };
        assert_ne!(generate_arma(&spec).unwrap().values, generate_arma(&other).unwrap().values);
    }

    #[test]
    fn rejects_non_stationary_ar() {
        let spec = GeneratorSpec { ar: vec![1.0], ..Default::default() };
        assert!(matches!(generate_arma(&spec), Err(Error::Config(_))));
        let spec = GeneratorSpec { ar: vec![0.5, 0.6], ..Default::default() };
        assert!(matches!(generate_arma(&spec), Err(Error::Config(_))));
        let spec = GeneratorSpec { innovation_std: 0.0, ..Default::default() };
        assert!(generate_arma(&spec).is_err());
    }

    #[test]
    fn reflection_round_trip() {
        let ar = vec![0.5, -0.3, 0.1];
        let k = reflection_coefficients(&ar).unwrap();
        let back = ar_from_reflection(&k);
        for (a, b) in ar.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert!(is_stationary(&[1.2, -0.5]));
        assert!(!is_stationary(&[0.5, 0.5]));
        assert!(is_invertible(&[0.2]));
        assert!(!is_invertible(&[-1.5]));
    }

    #[test]
    fn zero_shift_is_identity() {
        let ts = generate_arma(&GeneratorSpec::default()).unwrap();
        let out = inject_mean_shift(ts.clone(), CpInjection { t_cp: 250, mean_shift: 0.0 }).unwrap();
        assert_eq!(out, ts);
        assert!(out.change_points.is_empty());
    }

    #[test]
    fn shift_on_constant_series() {
        let ts = TimeSeries::from_values(vec![0.0; 500]);
        let out = inject_mean_shift(ts, CpInjection { t_cp: 250, mean_shift: 1.0 }).unwrap();
        for s in out.samples() {
            let expected = if s.seq < 250 { 0.0 } else { 1.0 };
            assert_eq!(s.value, expected, "seq {}", s.seq);
        }
        assert_eq!(out.first_cp(), Some(250));
    }

    #[test]
    fn shift_range_checked() {
        let ts = TimeSeries::from_values(vec![0.0; 10]);
        assert!(inject_mean_shift(ts.clone(), CpInjection { t_cp: 1, mean_shift: 1.0 }).is_err());
        assert!(inject_mean_shift(ts.clone(), CpInjection { t_cp: 11, mean_shift: 1.0 }).is_err());
        assert!(inject_mean_shift(ts, CpInjection { t_cp: 10, mean_shift: 1.0 }).is_ok());
    }

    #[test]
    fn shifted_arma_mean_difference() {
        let spec = GeneratorSpec { seed: 5, ..Default::default() };
        let ts = generate_with_changes(&spec, &[CpInjection { t_cp: 250, mean_shift: 1.0 }]).unwrap();
        let (pre, post) = ts.values.split_at(249);
        let diff = mean(post) - mean(pre);
        // Long-run variance of this ARMA(1,1) is (1.2 / 0.6)^2 = 4.
        let stderr = (4.0 / pre.len() as f64 + 4.0 / post.len() as f64).sqrt();
        assert!((diff - 1.0).abs() < 3.0 * stderr, "diff {diff}, stderr {stderr}");
    }

    #[test]
    fn injection_commutes_with_pre_cp_statistics() {
        let spec = GeneratorSpec { seed: 9, ..Default::default() };
        let raw = generate_arma(&spec).unwrap();
        let shifted = inject_mean_shift(raw.clone(), CpInjection { t_cp: 250, mean_shift: 2.5 }).unwrap();
        assert_eq!(&raw.values[..249], &shifted.values[..249]);
        assert_eq!(mean(&raw.values[..249]), mean(&shifted.values[..249]));
    }

    #[test]
    fn autocovariance_hand_values() {
        assert_eq!(empirical_autocovariance(&[1.0; 4], 0).unwrap(), 0.0);
        let alt = [1.0, -1.0, 1.0, -1.0];
        assert_relative_eq!(empirical_autocovariance(&alt, 0).unwrap(), 1.0);
        assert_relative_eq!(empirical_autocovariance(&alt, 1).unwrap(), -0.75);
        assert!(empirical_autocovariance(&[], 0).is_err());
        assert!(empirical_autocovariance(&alt, 4).is_err());
    }

    #[test]
    fn autocovariance_of_iid_noise_is_small() {
        let ts = generate_arma(&GeneratorSpec::white_noise(100_000, 21)).unwrap();
        assert!(empirical_autocovariance(&ts.values, 5).unwrap().abs() < 0.02);
    }

    #[test]
    fn csv_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let spec = GeneratorSpec { length: 50, seed: 1, ..Default::default() };
        let ts = generate_with_changes(&spec, &[CpInjection { t_cp: 20, mean_shift: 1.0 }]).unwrap();
        ts.write_csv(&path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("seq,value\n1,"));
        assert_eq!(TimeSeries::read_csv(&path).unwrap(), ts);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lag0_is_biased_variance_and_shift_invariant(
                xs in proptest::collection::vec(-100.0f64..100.0, 2..60),
                c in -1e3f64..1e3,
                lag in 0usize..5,
            ) {
                let n = xs.len() as f64;
                let m = mean(&xs);
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                let g0 = empirical_autocovariance(&xs, 0).unwrap();
                prop_assert!((g0 - var).abs() <= 1e-9 * var.max(1.0));
                if lag < xs.len() {
                    let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
                    let a = empirical_autocovariance(&xs, lag).unwrap();
                    let b = empirical_autocovariance(&shifted, lag).unwrap();
                    prop_assert!((a - b).abs() <= 1e-7 * var.max(1.0));
                }
            }
        }
    }
}

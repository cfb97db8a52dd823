//! Monte Carlo critical values for the CUSUM boundary and the offline test.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;

use super::Sidedness;
use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};
use crate::seed;

const CHUNK: usize = 1000;

/// Empirical `(1 - alpha)` quantile of `sup_{u in (0,1]} W(u) / u^gamma`
/// (or of `|W(u)|` when two-sided), with `W` simulated as scaled Gaussian
/// partial sums on the grid `u = i/N, i = 1..N`.
pub fn calibrate_cv(
    gamma: f64,
    alpha: f64,
    sidedness: Sidedness,
    grid_points: usize,
    replications: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} not in [0, 0.5)")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} not in (0, 1)")));
    }
    if grid_points < 1_000 || replications < 10_000 {
        return Err(Error::Config(format!(
            "calibration needs N >= 1000 and R >= 10000 (got N = {grid_points}, R = {replications})"
        )));
    }
    let n = grid_points as f64;
    let weights: Vec<f64> = (1..=grid_points).map(|i| (i as f64 / n).powf(-gamma)).collect();
    let scale = 1.0 / n.sqrt();
    let two_sided = sidedness == Sidedness::TwoSided;

    let chunks = replications.div_ceil(CHUNK);
    let sups: Vec<Vec<f64>> = map_indexed(chunks, exec, |c| {
        let mut rng = seed::rng_for(seed, &[c as u64]);
        let reps = CHUNK.min(replications - c * CHUNK);
        (0..reps)
            .map(|_| {
                let mut w = 0.0;
                let mut sup = f64::NEG_INFINITY;
                for &wt in &weights {
                    w += rng.sample::<f64, _>(StandardNormal);
                    let v = if two_sided { w.abs() } else { w } * wt;
                    if v > sup {
                        sup = v;
                    }
                }
                sup * scale
            })
            .collect()
    });
    let mut all: Vec<f64> = sups.into_iter().flatten().collect();
    Ok(upper_quantile(&mut all, alpha))
}

/// Inverse empirical CDF at `1 - alpha`.
fn upper_quantile(values: &mut [f64], alpha: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = ((1.0 - alpha) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// `(1 - alpha)` quantile of `sup |B(u)|` for a standard Brownian bridge,
/// simulated once per `alpha` and memoized for the process lifetime.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&q) = cache.lock().unwrap().get(&alpha.to_bits()) {
        return q;
    }
    const GRID: usize = 2_000;
    const REPS: usize = 20_000;
    let chunks = REPS / CHUNK;
    let sups: Vec<Vec<f64>> = map_indexed(chunks, Execution::Parallel, |c| {
        let mut rng = seed::rng_for(0xB41D6E, &[c as u64]);
        let mut path = vec![0.0; GRID];
        (0..CHUNK)
            .map(|_| {
                let mut w = 0.0;
                for p in path.iter_mut() {
                    w += rng.sample::<f64, _>(StandardNormal);
                    *p = w;
                }
                let end = w;
                let n = GRID as f64;
                path.iter()
                    .enumerate()
                    .map(|(i, &w)| (w - (i + 1) as f64 / n * end).abs())
                    .fold(0.0, f64::max)
                    / n.sqrt()
            })
            .collect()
    });
    let mut all: Vec<f64> = sups.into_iter().flatten().collect();
    let q = upper_quantile(&mut all, alpha);
    cache.lock().unwrap().insert(alpha.to_bits(), q);
    q
}

/// Exact-match key of a cached critical value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvKey {
    pub gamma: f64,
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub grid_points: usize,
    pub replications: usize,
    pub seed: u64,
}

impl CvKey {
    pub fn new(
        gamma: f64,
        alpha: f64,
        sidedness: Sidedness,
        grid_points: usize,
        replications: usize,
        seed: u64,
    ) -> Self {
        CvKey { gamma, alpha, sidedness, grid_points, replications, seed }
    }

    pub fn calibrate(&self, exec: Execution) -> Result<f64> {
        calibrate_cv(
            self.gamma,
            self.alpha,
            self.sidedness,
            self.grid_points,
            self.replications,
            self.seed,
            exec,
        )
    }
}

impl Eq for CvKey {}

impl Hash for CvKey {
    fn hash<H: Hasher>(&self, h: &mut H) {
        self.gamma.to_bits().hash(h);
        self.alpha.to_bits().hash(h);
        self.sidedness.hash(h);
        self.grid_points.hash(h);
        self.replications.hash(h);
        self.seed.hash(h);
    }
}

const CACHE_HEADER: &str = "gamma,alpha,sidedness,grid_points,replications,seed,cv";

/// Critical values keyed by their full calibration recipe, optionally backed
/// by an append-only CSV file. Lookups never recompute a cached key.
#[derive(Debug, Default)]
pub struct CvCache {
    entries: Mutex<HashMap<CvKey, f64>>,
    path: Option<PathBuf>,
    exec: Execution,
}

impl CvCache {
    pub fn in_memory() -> Self {
        CvCache::default()
    }

    /// Opens (or prepares to create) a cache file.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
            for rec in r.records() {
                let rec = rec?;
                let bad = || Error::Decode {
                    line: rec.iter().collect::<Vec<_>>().join(","),
                    reason: "malformed critical-value row".into(),
                };
                if rec.len() != 7 {
                    return Err(bad());
                }
                let key = CvKey {
                    gamma: rec[0].parse().map_err(|_| bad())?,
                    alpha: rec[1].parse().map_err(|_| bad())?,
                    sidedness: Sidedness::parse(&rec[2])?,
                    grid_points: rec[3].parse().map_err(|_| bad())?,
                    replications: rec[4].parse().map_err(|_| bad())?,
                    seed: rec[5].parse().map_err(|_| bad())?,
                };
                entries.insert(key, rec[6].parse().map_err(|_| bad())?);
            }
        }
        Ok(CvCache { entries: Mutex::new(entries), path: Some(path.to_path_buf()), exec: Execution::Parallel })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn insert(&self, key: CvKey, cv: f64) {
        self.entries.lock().unwrap().insert(key, cv);
    }

    pub fn get(&self, key: &CvKey) -> Option<f64> {
        self.entries.lock().unwrap().get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached value, or calibrates, stores and persists it.
    /// The boolean is `true` on a cache hit.
    pub fn get_or_calibrate(&self, key: &CvKey) -> Result<(f64, bool)> {
        if let Some(cv) = self.get(key) {
            return Ok((cv, true));
        }
        let cv = key.calibrate(self.exec)?;
        let mut entries = self.entries.lock().unwrap();
        if let Some(&existing) = entries.get(key) {
            return Ok((existing, true));
        }
        entries.insert(*key, cv);
        if let Some(path) = &self.path {
            let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(f, "{CACHE_HEADER}")?;
            }
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                key.gamma,
                key.alpha,
                key.sidedness.as_str(),
                key.grid_points,
                key.replications,
                key.seed,
                cv
            )?;
        }
        Ok((cv, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(gamma: f64, alpha: f64, sided: Sidedness, reps: usize, seed: u64) -> f64 {
        calibrate_cv(gamma, alpha, sided, 1_000, reps, seed, Execution::Parallel).unwrap()
    }

    #[test]
    fn rejects_bad_gamma_and_small_grids() {
        let r = calibrate_cv(0.5, 0.05, Sidedness::OneSided, 1000, 10_000, 1, Execution::Sequential);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = calibrate_cv(0.1, 0.05, Sidedness::OneSided, 999, 10_000, 1, Execution::Sequential);
        assert!(r.is_err());
    }

    #[test]
    fn monotone_in_alpha() {
        let hi = cv(0.25, 0.01, Sidedness::TwoSided, 10_000, 4);
        let mid = cv(0.25, 0.05, Sidedness::TwoSided, 10_000, 4);
        let lo = cv(0.25, 0.10, Sidedness::TwoSided, 10_000, 4);
        assert!(hi >= mid && mid >= lo, "{hi} {mid} {lo}");
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a = calibrate_cv(0.1, 0.05, Sidedness::OneSided, 1000, 10_000, 9, Execution::Sequential);
        let b = calibrate_cv(0.1, 0.05, Sidedness::OneSided, 1000, 10_000, 9, Execution::Parallel);
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn kolmogorov_quantile_matches_series() {
        // P(sup|B| > x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2); solve = 0.05.
        let tail = |x: f64| {
            2.0 * (1..100)
                .map(|k| {
                    let k = k as f64;
                    (if k as i64 % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * k * k * x * x).exp()
                })
                .sum::<f64>()
        };
        let (mut lo, mut hi) = (0.5, 3.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if tail(mid) > 0.05 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let q = kolmogorov_quantile(0.05);
        assert!((q - lo).abs() < 0.03, "{q} vs {lo}");
    }

    #[test]
    fn cache_file_round_trip_and_hits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cv.csv");
        let key = CvKey::new(0.0, 0.05, Sidedness::OneSided, 1000, 10_000, 3);
        let cache = CvCache::open(&path).unwrap();
        let (v, hit) = cache.get_or_calibrate(&key).unwrap();
        assert!(!hit);
        let (v2, hit2) = cache.get_or_calibrate(&key).unwrap();
        assert!(hit2);
        assert_eq!(v, v2);
        let reopened = CvCache::open(&path).unwrap();
        assert_eq!(reopened.get(&key), Some(v));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(CACHE_HEADER));
    }
}

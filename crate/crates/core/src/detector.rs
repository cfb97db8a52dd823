//! Uniform construction and driving of the three online detectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::arma::{pcusum_detector, Pcusum, PcusumConfig};
use crate::cusum::{CusumConfig, CvCache, Identity, WindowedCusum};
use crate::error::{Error, Result};
use crate::event::DetectionEvent;
use crate::rbocpd::{RbocpdConfig, RbocpdDetector};
use crate::series::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Npcusum,
    Pcusum,
    Bocd,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Npcusum, DetectorKind::Pcusum, DetectorKind::Bocd];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Npcusum => "npcusum",
            DetectorKind::Pcusum => "pcusum",
            DetectorKind::Bocd => "bocd",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "npcusum" => Ok(DetectorKind::Npcusum),
            "pcusum" => Ok(DetectorKind::Pcusum),
            "bocd" => Ok(DetectorKind::Bocd),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

/// Detector name plus a JSON object of tuning parameters. Absent parameters
/// take their defaults; unknown ones are rejected. CUSUM detectors accept an
/// extra `cv` that bypasses calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

/// Fully parsed detector configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorConfig {
    Npcusum { cusum: CusumConfig, cv: Option<f64> },
    Pcusum { config: PcusumConfig, cv: Option<f64> },
    Bocd(RbocpdConfig),
}

fn take_f64(map: &mut Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("parameter {key} must be a number"))),
    }
}

fn take_usize(map: &mut Map<String, Value>, key: &str, default: usize) -> Result<usize> {
    match map.remove(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::Config(format!("parameter {key} must be a non-negative integer"))),
    }
}

fn parse_strict<T: serde::de::DeserializeOwned>(kind: DetectorKind, map: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::Config(format!("invalid {kind} parameters: {e}")))
}

fn check_keys(kind: DetectorKind, map: &Map<String, Value>, allowed: &[&str]) -> Result<()> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::Config(format!("unknown {kind} parameter {k:?}"))),
        None => Ok(()),
    }
}

const CUSUM_KEYS: &[&str] = &[
    "alpha",
    "gamma",
    "training_len",
    "window_len",
    "bartlett_window",
    "sidedness",
    "cv_grid",
    "cv_replications",
    "cv_seed",
];
const BOCD_KEYS: &[&str] = &[
    "n_runs",
    "q_weight",
    "hazard",
    "restart_origin",
    "stopping_mode",
    "binarization",
    "training_len",
    "seed",
];

impl DetectorSpec {
    pub fn new(kind: DetectorKind, params: Value) -> Self {
        DetectorSpec { kind, params }
    }

    pub fn defaults(kind: DetectorKind) -> Self {
        DetectorSpec { kind, params: empty_object() }
    }

    pub fn parse(&self) -> Result<DetectorConfig> {
        let mut map = match &self.params {
            Value::Object(m) => m.clone(),
            Value::Null => Map::new(),
            other => return Err(Error::Config(format!("detector params must be an object, got {other}"))),
        };
        let cfg = match self.kind {
            DetectorKind::Npcusum => {
                let cv = take_f64(&mut map, "cv")?;
                check_keys(self.kind, &map, CUSUM_KEYS)?;
                DetectorConfig::Npcusum { cusum: parse_strict(self.kind, map)?, cv }
            }
            DetectorKind::Pcusum => {
                let cv = take_f64(&mut map, "cv")?;
                let ar_order = take_usize(&mut map, "ar_order", 1)?;
                let ma_order = take_usize(&mut map, "ma_order", 1)?;
                check_keys(self.kind, &map, CUSUM_KEYS)?;
                let cusum = parse_strict(self.kind, map)?;
                DetectorConfig::Pcusum { config: PcusumConfig { cusum, ar_order, ma_order }, cv }
            }
            DetectorKind::Bocd => {
                check_keys(self.kind, &map, BOCD_KEYS)?;
                DetectorConfig::Bocd(parse_strict(self.kind, map)?)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Instantiates the detector, resolving critical values through `cache`.
    pub fn build(&self, cache: &CvCache) -> Result<OnlineDetector> {
        self.parse()?.build(cache)
    }
}

impl DetectorConfig {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorConfig::Npcusum { .. } => DetectorKind::Npcusum,
            DetectorConfig::Pcusum { .. } => DetectorKind::Pcusum,
            DetectorConfig::Bocd(_) => DetectorKind::Bocd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DetectorConfig::Npcusum { cusum, cv } => {
                cusum.validate()?;
                check_cv(*cv)
            }
            DetectorConfig::Pcusum { config, cv } => {
                config.cusum.validate()?;
                check_cv(*cv)
            }
            DetectorConfig::Bocd(c) => c.validate(),
        }
    }

    /// The critical value the CUSUM detectors will use.
    pub fn resolve_cv(&self, cache: &CvCache) -> Result<Option<f64>> {
        let (cusum, cv) = match self {
            DetectorConfig::Npcusum { cusum, cv } => (cusum, cv),
            DetectorConfig::Pcusum { config, cv } => (&config.cusum, cv),
            DetectorConfig::Bocd(_) => return Ok(None),
        };
        match cv {
            Some(v) => Ok(Some(*v)),
            None => cache.get_or_calibrate(&cusum.cv_key()).map(|(v, _)| Some(v)),
        }
    }

    pub fn build(&self, cache: &CvCache) -> Result<OnlineDetector> {
        let cv = self.resolve_cv(cache)?;
        Ok(match self {
            DetectorConfig::Npcusum { cusum, .. } => {
                OnlineDetector::Npcusum(WindowedCusum::new(cusum.clone(), cv.unwrap_or_default(), Identity)?)
            }
            DetectorConfig::Pcusum { config, .. } => {
                OnlineDetector::Pcusum(pcusum_detector(config, cv.unwrap_or_default())?)
            }
            DetectorConfig::Bocd(c) => OnlineDetector::Bocd(Box::new(RbocpdDetector::new(c.clone())?)),
        })
    }
}

fn check_cv(cv: Option<f64>) -> Result<()> {
    match cv {
        Some(v) if !(v.is_finite() && v > 0.0) => Err(Error::Config(format!("cv {v} must be positive"))),
        _ => Ok(()),
    }
}

/// A running detector instance; one per stream.
pub enum OnlineDetector {
    Npcusum(WindowedCusum<Identity>),
    Pcusum(Pcusum),
    Bocd(Box<RbocpdDetector>),
}

impl OnlineDetector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            OnlineDetector::Npcusum(_) => DetectorKind::Npcusum,
            OnlineDetector::Pcusum(_) => DetectorKind::Pcusum,
            OnlineDetector::Bocd(_) => DetectorKind::Bocd,
        }
    }

    pub fn push(&mut self, sample: Sample) -> Result<Option<DetectionEvent>> {
        match self {
            OnlineDetector::Npcusum(d) => d.push(sample),
            OnlineDetector::Pcusum(d) => d.push(sample),
            OnlineDetector::Bocd(d) => d.push(sample),
        }
    }

    /// Feeds `values` as seq 1..=len and collects every event.
    pub fn run(&mut self, values: &[f64]) -> Result<Vec<DetectionEvent>> {
        let mut events = Vec::new();
        for (i, &value) in values.iter().enumerate() {
            if let Some(ev) = self.push(Sample { seq: i as u64 + 1, value })? {
                events.push(ev);
            }
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn names_round_trip() {
        for k in DetectorKind::ALL {
            assert_eq!(k.as_str().parse::<DetectorKind>().unwrap(), k);
        }
        assert!("arima".parse::<DetectorKind>().is_err());
    }

    #[test]
    fn unknown_parameters_rejected() {
        let spec = DetectorSpec::new(DetectorKind::Npcusum, json!({"alpah": 0.1}));
        assert!(matches!(spec.parse(), Err(Error::Config(_))));
        let spec = DetectorSpec::new(DetectorKind::Bocd, json!({"cv": 2.0}));
        assert!(spec.parse().is_err());
    }

    #[test]
    fn parameters_parse() {
        let spec = DetectorSpec::new(DetectorKind::Pcusum, json!({"ar_order": 2, "ma_order": 0, "cv": 2.4, "alpha": 0.1}));
        match spec.parse().unwrap() {
            DetectorConfig::Pcusum { config, cv } => {
                assert_eq!((config.ar_order, config.ma_order, cv), (2, 0, Some(2.4)));
                assert_eq!(config.cusum.alpha, 0.1);
            }
            other => panic!("{other:?}"),
        }
        let spec = DetectorSpec::new(DetectorKind::Bocd, json!({"n_runs": 5, "hazard": {"constant": 0.01}}));
        assert!(matches!(spec.parse().unwrap(), DetectorConfig::Bocd(c) if c.n_runs == 5));
    }

    #[test]
    fn explicit_cv_skips_calibration() {
        let cache = CvCache::in_memory();
        let spec = DetectorSpec::new(DetectorKind::Npcusum, json!({"cv": 2.39}));
        let det = spec.build(&cache).unwrap();
        assert_eq!(det.kind(), DetectorKind::Npcusum);
        assert!(cache.is_empty());
    }
}

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{BinarizationSpec, RbocpdConfig, RunDetection, SingleRun, StoppingMode};
use crate::clock::now_ns;
use crate::error::Result;
use crate::event::DetectionEvent;
use crate::par::{map_indexed, Execution};
use crate::seed::rng_for;
use crate::series::Sample;

/// Combines per-run detections into alarms.
#[derive(Debug, Clone)]
pub struct Aggregator {
    mode: StoppingMode,
    q: f64,
    n: usize,
    segment_start: u64,
    first: Vec<Option<RunDetection>>,
    latest: Vec<Option<RunDetection>>,
    detected: usize,
}

impl Aggregator {
    pub fn new(config: &RbocpdConfig) -> Self {
        Aggregator {
            mode: config.stopping_mode,
            q: config.q_weight,
            n: config.n_runs,
            segment_start: config.restart_origin,
            first: vec![None; config.n_runs],
            latest: vec![None; config.n_runs],
            detected: 0,
        }
    }

    pub fn record(&mut self, run: usize, det: RunDetection) {
        if self.first[run].is_none() {
            self.first[run] = Some(det);
            self.detected += 1;
        }
        self.latest[run] = Some(det);
    }

    /// Fraction of runs that detected since the last alarm.
    pub fn detecting_fraction(&self) -> f64 {
        self.detected as f64 / self.n as f64
    }

    /// Evaluates the stopping rule after all runs absorbed sample `t`.
    pub fn decide(&mut self, t: u64) -> Option<DetectionEvent> {
        let (fire, statistic, pool) = match self.mode {
            StoppingMode::DetectionFraction => {
                let f = self.detecting_fraction();
                (f > self.q, f, &self.first)
            }
            StoppingMode::LocationMean => {
                let base = self.segment_start;
                // A run's competitor may start before the aggregator's segment.
                let sum: f64 =
                    self.latest.iter().flatten().map(|d| (d.location + 1).saturating_sub(base) as f64).sum();
                let cp_bar = sum / self.n as f64;
                (cp_bar > self.q * (t + 1 - base) as f64, cp_bar, &self.latest)
            }
        };
        if !fire {
            return None;
        }
        let mut locations: Vec<u64> = pool.iter().flatten().map(|d| d.location).collect();
        locations.sort_unstable();
        let cp_estimate = locations[(locations.len() - 1) / 2].max(1);
        self.reset(t + 1);
        Some(DetectionEvent {
            detection_seq: t,
            cp_estimate,
            wall_detect_ns: now_ns(),
            statistic_value: statistic,
            fallback: false,
        })
    }

    fn reset(&mut self, segment_start: u64) {
        self.segment_start = segment_start;
        self.first.iter_mut().for_each(|d| *d = None);
        self.latest.iter_mut().for_each(|d| *d = None);
        self.detected = 0;
    }
}

struct Run {
    single: SingleRun,
    rng: ChaCha8Rng,
}

/// Online r-BOCPD: the first `training_len` samples build the binarization
/// CDF, then every sample (training included) advances all runs.
pub struct RbocpdDetector {
    config: RbocpdConfig,
    buffer: Vec<f64>,
    spec: Option<BinarizationSpec>,
    runs: Vec<Run>,
    aggregator: Aggregator,
    next_t: u64,
}

impl RbocpdDetector {
    pub fn new(config: RbocpdConfig) -> Result<Self> {
        config.validate()?;
        let runs = (0..config.n_runs)
            .map(|i| Run {
                single: SingleRun::new(config.hazard, config.restart_origin),
                rng: rng_for(config.seed, &[i as u64]),
            })
            .collect();
        Ok(RbocpdDetector {
            aggregator: Aggregator::new(&config),
            next_t: config.restart_origin,
            buffer: Vec::with_capacity(config.training_len),
            spec: None,
            runs,
            config,
        })
    }

    pub fn config(&self) -> &RbocpdConfig {
        &self.config
    }

    pub fn is_monitoring(&self) -> bool {
        self.spec.is_some()
    }

    /// Total forecasters alive across all runs.
    pub fn bank_sizes(&self) -> usize {
        self.runs.iter().map(|r| r.single.bank().len()).sum()
    }

    fn advance(&mut self, y: f64) -> Option<DetectionEvent> {
        let spec = self.spec.as_ref().expect("binarization ready");
        let t = self.next_t;
        self.next_t += 1;
        for (i, run) in self.runs.iter_mut().enumerate() {
            let bit = spec.binarize(y, &mut run.rng);
            if let Some(det) = run.single.push(bit) {
                self.aggregator.record(i, det);
            }
        }
        self.aggregator.decide(t)
    }

    /// Sample seqs are assigned internally from `restart_origin`; the
    /// caller's seq is only used for ordering. When the training window
    /// completes, the buffered samples are replayed and the latest alarm
    /// among them is returned.
    pub fn push(&mut self, sample: Sample) -> Result<Option<DetectionEvent>> {
        if self.spec.is_some() {
            return Ok(self.advance(sample.value));
        }
        self.buffer.push(sample.value);
        if self.buffer.len() < self.config.training_len {
            return Ok(None);
        }
        self.spec = Some(BinarizationSpec::from_training(&self.buffer, self.config.binarization)?);
        let buffered = std::mem::take(&mut self.buffer);
        let mut last = None;
        for y in buffered {
            if let Some(ev) = self.advance(y) {
                last = Some(ev);
            }
        }
        Ok(last)
    }
}

/// Per-run detection timelines over `stream`, binarized through the CDF of
/// `training`. Runs are independent and may be evaluated in parallel.
pub fn run_timelines(
    stream: &[f64],
    training: &[f64],
    config: &RbocpdConfig,
    exec: Execution,
) -> Result<Vec<Vec<RunDetection>>> {
    config.validate()?;
    let spec = BinarizationSpec::from_training(training, config.binarization)?;
    Ok(map_indexed(config.n_runs, exec, |i| {
        let mut rng = rng_for(config.seed, &[i as u64]);
        let mut run = SingleRun::new(config.hazard, config.restart_origin);
        stream
            .iter()
            .filter_map(|&y| {
                let bit = spec.binarize(y, &mut rng);
                run.push(bit)
            })
            .collect()
    }))
}

/// Every alarm of the stopping rule over `stream`.
pub fn detect_all_with_stopping(
    stream: &[f64],
    training: &[f64],
    config: &RbocpdConfig,
    exec: Execution,
) -> Result<Vec<DetectionEvent>> {
    let timelines = run_timelines(stream, training, config, exec)?;
    Ok(aggregate(&timelines, stream.len(), config, false))
}

/// First alarm of the stopping rule over `stream`.
pub fn detect_with_stopping(
    stream: &[f64],
    training: &[f64],
    config: &RbocpdConfig,
    exec: Execution,
) -> Result<Option<DetectionEvent>> {
    let timelines = run_timelines(stream, training, config, exec)?;
    Ok(aggregate(&timelines, stream.len(), config, true).into_iter().next())
}

fn aggregate(
    timelines: &[Vec<RunDetection>],
    len: usize,
    config: &RbocpdConfig,
    first_only: bool,
) -> Vec<DetectionEvent> {
    let mut agg = Aggregator::new(config);
    let mut cursor = vec![0usize; timelines.len()];
    let mut events = Vec::new();
    let origin = config.restart_origin;
    for t in origin..origin + len as u64 {
        for (run, line) in timelines.iter().enumerate() {
            if let Some(det) = line.get(cursor[run]).filter(|d| d.t == t) {
                agg.record(run, *det);
                cursor[run] += 1;
            }
        }
        if let Some(ev) = agg.decide(t) {
            events.push(ev);
            if first_only {
                break;
            }
        }
    }
    events
}

/// Writes `run_id,t,detected_location` rows.
pub fn write_timelines(path: &Path, timelines: &[Vec<RunDetection>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    w.write_record(["run_id", "t", "detected_location"])?;
    for (run, line) in timelines.iter().enumerate() {
        for d in line {
            w.write_record([run.to_string(), d.t.to_string(), d.location.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| e.into_error())?.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbocpd::{run_single, BinarizationMode};
    use crate::series::{generate_with_changes, CpInjection, GeneratorSpec};

    fn stream(seed: u64, shift: f64) -> Vec<f64> {
        let spec = GeneratorSpec { seed, ..Default::default() };
        generate_with_changes(&spec, &[CpInjection { t_cp: 250, mean_shift: shift }]).unwrap().values
    }

    fn small() -> RbocpdConfig {
        RbocpdConfig { n_runs: 20, ..Default::default() }
    }

    #[test]
    fn streaming_matches_offline() {
        for seed in 0..5 {
            let ys = stream(seed, 1.0);
            let cfg = small();
            let mut det = RbocpdDetector::new(cfg.clone()).unwrap();
            let mut online = Vec::new();
            for (i, &y) in ys.iter().enumerate() {
                if let Some(ev) = det.push(Sample { seq: i as u64 + 1, value: y }).unwrap() {
                    online.push((ev.detection_seq, ev.cp_estimate));
                }
            }
            let offline: Vec<_> = detect_all_with_stopping(&ys, &ys[..100], &cfg, Execution::Sequential)
                .unwrap()
                .into_iter()
                .map(|e| (e.detection_seq, e.cp_estimate))
                .collect();
            assert_eq!(online, offline);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let ys = stream(3, 1.0);
        let cfg = small();
        let a = run_timelines(&ys, &ys[..100], &cfg, Execution::Sequential).unwrap();
        let b = run_timelines(&ys, &ys[..100], &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_run_reduces_to_run_single() {
        let ys = stream(4, 1.0);
        let cfg = RbocpdConfig { n_runs: 1, ..Default::default() };
        let spec = BinarizationSpec::from_training(&ys[..100], BinarizationMode::Randomized).unwrap();
        let mut rng = rng_for(cfg.seed, &[0]);
        let bits: Vec<bool> = ys.iter().map(|&y| spec.binarize(y, &mut rng)).collect();
        let single = run_single(&bits, cfg.hazard, 1);
        let ev = detect_with_stopping(&ys, &ys[..100], &cfg, Execution::Sequential).unwrap();
        assert_eq!(ev.map(|e| e.detection_seq), single.first().copied());
    }

    #[test]
    fn quiet_streams_rarely_alarm() {
        let runs = 30;
        let cfg = RbocpdConfig { n_runs: 50, ..Default::default() };
        let alarms = (0..runs)
            .filter(|&s| {
                let ys = stream(100 + s, 0.0);
                detect_with_stopping(&ys, &ys[..100], &cfg, Execution::Parallel).unwrap().is_some()
            })
            .count();
        assert!(alarms as f64 / runs as f64 <= 0.10, "{alarms}/{runs}");
    }

    #[test]
    fn fraction_rule_is_monotone_in_q() {
        let ys = stream(200, 0.0);
        let base = RbocpdConfig { n_runs: 30, hazard: crate::rbocpd::Hazard::Constant(0.05), ..Default::default() };
        let timelines = run_timelines(&ys, &ys[..100], &base, Execution::Parallel).unwrap();
        let mut prev = usize::MAX;
        for q in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let cfg = RbocpdConfig { q_weight: q, ..base.clone() };
            let n = aggregate(&timelines, ys.len(), &cfg, true).len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn location_mean_mode_fires_on_large_shift() {
        let ys = stream(5, 4.0);
        let cfg = RbocpdConfig { stopping_mode: StoppingMode::LocationMean, q_weight: 0.5, ..small() };
        let ev = detect_with_stopping(&ys, &ys[..100], &cfg, Execution::Sequential).unwrap();
        assert!(ev.is_some());
    }

    #[test]
    fn location_mean_tolerates_locations_before_segment() {
        let cfg = RbocpdConfig { n_runs: 2, stopping_mode: StoppingMode::LocationMean, q_weight: 0.5, ..small() };
        let mut agg = Aggregator::new(&cfg);
        agg.reset(100);
        agg.record(0, RunDetection { t: 120, location: 40 });
        agg.record(1, RunDetection { t: 120, location: 110 });
        assert!(agg.decide(120).is_none());
        agg.record(0, RunDetection { t: 121, location: 119 });
        let ev = agg.decide(121).unwrap();
        assert_eq!(ev.detection_seq, 121);
        assert_eq!(ev.cp_estimate, 110);
    }

    #[test]
    fn timeline_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_timelines(&path, &[vec![RunDetection { t: 5, location: 3 }], vec![]]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "run_id,t,detected_location\n0,5,3\n");
    }
}

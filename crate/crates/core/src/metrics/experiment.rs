use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::classify::{actual_dd, classify_detection, first_detection, Detection, Outcome};
use super::resources::{core_count, sample_resources, MetricSample, Scope};
use crate::clock::now_ns;
use crate::cusum::CvCache;
use crate::detector::{DetectorConfig, DetectorKind, DetectorSpec};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};
use crate::protocol::{run_client, serve, ClientConfig, ClientLog, ServerConfig};
use crate::seed::derive_seed;
use crate::series::{generate_with_changes, CpInjection, GeneratorSpec, Sample, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    /// Detectors run in-process, no pacing.
    #[default]
    Offline,
    /// A server on the loopback interface and `k` paced clients.
    Loopback,
}

fn default_clients() -> Vec<usize> {
    vec![1]
}

fn default_pacing() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

fn default_interval() -> u64 {
    50
}

/// Experiment configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo replications `R`.
    pub replications: usize,
    /// Client counts `k` to sweep.
    #[serde(default = "default_clients")]
    pub clients: Vec<usize>,
    #[serde(default)]
    pub mode: ExperimentMode,
    #[serde(default = "default_pacing")]
    pub pacing_ms: f64,
    /// All `k` clients of a replication stream the same series.
    #[serde(default = "default_true")]
    pub shared_series: bool,
    /// Stop a stream after its first detection at or past the last change.
    #[serde(default)]
    pub early_stop: bool,
    #[serde(default)]
    pub compute_slots: Option<usize>,
    /// Loopback replications run this many at a time.
    #[serde(default = "default_one")]
    pub concurrent_replications: usize,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub cv_cache: Option<PathBuf>,
    #[serde(default = "default_interval")]
    pub sample_interval_ms: u64,
    /// Generator; its `seed` is replaced by one derived per replication.
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub changes: Vec<CpInjection>,
    pub detectors: Vec<DetectorSpec>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.clients.is_empty() || self.clients.contains(&0) {
            return Err(Error::Config("every client count must be at least 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::Config("no detectors configured".into()));
        }
        if !(self.pacing_ms >= 0.0 && self.pacing_ms.is_finite()) {
            return Err(Error::Config("pacing_ms must be non-negative".into()));
        }
        if self.concurrent_replications == 0 {
            return Err(Error::Config("concurrent_replications must be at least 1".into()));
        }
        self.generator.validate()?;
        for c in &self.changes {
            if !(c.t_cp > 1 && c.t_cp <= self.generator.length) {
                return Err(Error::Config(format!("t_cp {} outside (1, {}]", c.t_cp, self.generator.length)));
            }
        }
        for d in &self.detectors {
            d.parse()?;
        }
        Ok(())
    }

    fn first_cp(&self) -> Option<u64> {
        self.changes.iter().map(|c| c.t_cp as u64).min()
    }

    fn last_cp(&self) -> Option<u64> {
        self.changes.iter().map(|c| c.t_cp as u64).max()
    }

    /// Series streamed by `client` in `replication`.
    pub fn series(&self, replication: usize, client: usize) -> Result<TimeSeries> {
        let path: Vec<u64> = if self.shared_series {
            vec![replication as u64]
        } else {
            vec![replication as u64, client as u64]
        };
        let gen = GeneratorSpec { seed: derive_seed(self.seed, &path), ..self.generator.clone() };
        generate_with_changes(&gen, &self.changes)
    }
}

/// Per-sample timings of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTiming {
    pub seq: u64,
    pub response_ms: Option<f64>,
    pub processing_ns: Option<u64>,
}

/// Outcome of one client stream (one unit of `R * k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub detector: DetectorKind,
    pub k: usize,
    pub replication: usize,
    pub client: usize,
    pub outcome: Option<Outcome>,
    pub detection: Option<Detection>,
    pub gap: Option<u64>,
    pub actual_dd_ms: Option<f64>,
    pub timeouts: usize,
    pub timings: Vec<SampleTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub detector: DetectorKind,
    pub k: usize,
    pub replication: usize,
    #[serde(flatten)]
    pub sample: MetricSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub detector: DetectorKind,
    pub k: usize,
    pub mode: ExperimentMode,
    pub replications: usize,
    /// Replications excluded because a stream failed.
    pub dropped: usize,
    /// Classified streams (`k` per kept replication).
    pub units: usize,
    pub true_alarm_rate: f64,
    pub false_alarm_rate: f64,
    pub miss_rate: f64,
    pub cp_gap_mean: Option<f64>,
    pub cp_gap_std: Option<f64>,
    pub actual_dd_ms_mean: Option<f64>,
    pub actual_dd_ms_std: Option<f64>,
    pub response_ms_p50: Option<f64>,
    pub response_ms_p90: Option<f64>,
    pub response_ms_p99: Option<f64>,
    pub processing_ns_p50: Option<f64>,
    pub cpu_percent_mean: Option<f64>,
    pub cpu_percent_max: Option<f64>,
    pub rss_bytes_mean: Option<f64>,
    pub rss_bytes_max: Option<u64>,
    pub core_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub name: String,
    pub pacing_ms: f64,
    pub aggregates: Vec<AggregateResult>,
    pub units: Vec<UnitResult>,
    pub resources: Vec<ResourceRow>,
    pub dropped_reasons: Vec<String>,
}

impl ExperimentOutput {
    pub fn dropped(&self) -> usize {
        self.aggregates.iter().map(|a| a.dropped).sum()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Some((mean, var.sqrt()))
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

/// Critical values are resolved once up front and passed as `cv`.
fn resolve_params(spec: &DetectorSpec, cache: &CvCache) -> Result<DetectorSpec> {
    let cfg = spec.parse()?;
    let mut params = match &spec.params {
        Value::Object(m) => m.clone(),
        _ => Default::default(),
    };
    if let Some(cv) = cfg.resolve_cv(cache)? {
        params.insert("cv".into(), Value::from(cv));
    }
    Ok(DetectorSpec::new(spec.kind, Value::Object(params)))
}

fn offline_unit(
    spec: &ExperimentSpec,
    cfg: &DetectorConfig,
    cache: &CvCache,
    k: usize,
    replication: usize,
    client: usize,
) -> Result<UnitResult> {
    let ts = spec.series(replication, client)?;
    let mut det = cfg.build(cache)?;
    let last_cp = spec.last_cp();
    let mut first = None;
    let mut timings = Vec::with_capacity(ts.len());
    for s in ts.samples() {
        let start = now_ns();
        let ev = det.push(Sample { seq: s.seq, value: s.value })?;
        timings.push(SampleTiming { seq: s.seq, response_ms: None, processing_ns: Some(now_ns() - start) });
        if let Some(ev) = ev {
            let stop = spec.early_stop && last_cp.is_none_or(|cp| ev.detection_seq >= cp);
            first.get_or_insert(Detection::from(&ev));
            if stop {
                break;
            }
        }
    }
    let (outcome, gap) = match spec.first_cp() {
        Some(cp) => {
            let (o, g) = classify_detection(first, cp, ts.len() as u64)?;
            (Some(o), g)
        }
        None => (None, None),
    };
    Ok(UnitResult {
        detector: cfg.kind(),
        k,
        replication,
        client,
        outcome,
        detection: first,
        gap,
        actual_dd_ms: None,
        timeouts: 0,
        timings,
    })
}

fn loopback_unit(spec: &ExperimentSpec, log: &ClientLog, k: usize, replication: usize, client: usize) -> Result<UnitResult> {
    let len = spec.generator.length as u64;
    let first = first_detection(log);
    let (outcome, gap, dd) = match spec.first_cp() {
        Some(cp) => {
            let (o, g) = classify_detection(first, cp, len)?;
            let dd = match (o, first) {
                (Outcome::TrueAlarm, Some(d)) => Some(actual_dd(d.detection_seq, cp, log)?),
                _ => None,
            };
            (Some(o), g, dd)
        }
        None => (None, None, None),
    };
    Ok(UnitResult {
        detector: log.detector,
        k,
        replication,
        client,
        outcome,
        detection: first,
        gap,
        actual_dd_ms: dd,
        timeouts: log.timeouts(),
        timings: log
            .records
            .iter()
            .map(|r| SampleTiming {
                seq: r.seq,
                response_ms: r.response_ns().map(|ns| ns as f64 / 1e6),
                processing_ns: r.processing_ns,
            })
            .collect(),
    })
}

fn aggregate(
    detector: DetectorKind,
    k: usize,
    spec: &ExperimentSpec,
    units: &[UnitResult],
    resources: &[ResourceRow],
    dropped: usize,
) -> AggregateResult {
    let n = units.len();
    let count = |o: Outcome| units.iter().filter(|u| u.outcome == Some(o)).count();
    let rate = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let gaps: Vec<f64> = units.iter().filter_map(|u| u.gap).map(|g| g as f64).collect();
    let dds: Vec<f64> = units.iter().filter_map(|u| u.actual_dd_ms).collect();
    let responses = sorted(units.iter().flat_map(|u| u.timings.iter().filter_map(|t| t.response_ms)).collect());
    let processing =
        sorted(units.iter().flat_map(|u| u.timings.iter().filter_map(|t| t.processing_ns)).map(|p| p as f64).collect());
    let cpu: Vec<f64> = resources.iter().map(|r| r.sample.cpu_percent).collect();
    let rss: Vec<f64> = resources.iter().map(|r| r.sample.rss_bytes as f64).collect();
    AggregateResult {
        detector,
        k,
        mode: spec.mode,
        replications: spec.replications,
        dropped,
        units: n,
        true_alarm_rate: rate(count(Outcome::TrueAlarm)),
        false_alarm_rate: rate(count(Outcome::FalseAlarm)),
        miss_rate: rate(count(Outcome::Miss)),
        cp_gap_mean: mean_std(&gaps).map(|m| m.0),
        cp_gap_std: mean_std(&gaps).map(|m| m.1),
        actual_dd_ms_mean: mean_std(&dds).map(|m| m.0),
        actual_dd_ms_std: mean_std(&dds).map(|m| m.1),
        response_ms_p50: percentile(&responses, 50.0),
        response_ms_p90: percentile(&responses, 90.0),
        response_ms_p99: percentile(&responses, 99.0),
        processing_ns_p50: percentile(&processing, 50.0),
        cpu_percent_mean: mean_std(&cpu).map(|m| m.0),
        cpu_percent_max: cpu.iter().copied().reduce(f64::max),
        rss_bytes_mean: mean_std(&rss).map(|m| m.0),
        rss_bytes_max: resources.iter().map(|r| r.sample.rss_bytes).max(),
        core_count: core_count(),
    }
}

/// Runs every (detector, k) combination for `R` replications.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let cache = match &spec.cv_cache {
        Some(p) => CvCache::open(p)?,
        None => CvCache::in_memory(),
    }
    .with_execution(spec.execution);
    let detectors: Vec<DetectorSpec> =
        spec.detectors.iter().map(|d| resolve_params(d, &cache)).collect::<Result<_>>()?;
    let mut out = ExperimentOutput {
        name: spec.name.clone(),
        pacing_ms: spec.pacing_ms,
        aggregates: Vec::new(),
        units: Vec::new(),
        resources: Vec::new(),
        dropped_reasons: Vec::new(),
    };
    let server = match spec.mode {
        ExperimentMode::Offline => None,
        ExperimentMode::Loopback => Some(serve(ServerConfig {
            bind: "127.0.0.1:0".into(),
            max_sessions: spec.clients.iter().max().copied().unwrap_or(1) * spec.concurrent_replications,
            cv_cache: None,
            compute_slots: spec.compute_slots,
        })?),
    };
    for det in &detectors {
        let cfg = det.parse()?;
        for &k in &spec.clients {
            let started = std::time::Instant::now();
            let mut units = Vec::new();
            let mut resources = Vec::new();
            let mut dropped = 0;
            match &server {
                None => {
                    let per_rep = map_indexed(spec.replications, spec.execution, |r| {
                        (0..k).map(|c| offline_unit(spec, &cfg, &cache, k, r, c)).collect::<Result<Vec<_>>>()
                    });
                    for (r, res) in per_rep.into_iter().enumerate() {
                        match res {
                            Ok(us) => units.extend(us),
                            Err(e) => {
                                dropped += 1;
                                out.dropped_reasons.push(format!("{} k={k} replication {r}: {e}", det.kind));
                            }
                        }
                    }
                }
                Some(server) => {
                    let addr = server.local_addr().to_string();
                    let reps: Vec<usize> = (0..spec.replications).collect();
                    for batch in reps.chunks(spec.concurrent_replications) {
                        let sampler = sample_resources(Scope::Threads(server.thread_group()), spec.sample_interval_ms);
                        let logs = run_batch(spec, det, &addr, k, batch)?;
                        let samples = sampler.stop();
                        resources.extend(samples.into_iter().map(|s| ResourceRow {
                            detector: det.kind,
                            k,
                            replication: batch[0],
                            sample: s,
                        }));
                        for (r, rep_logs) in batch.iter().zip(logs) {
                            match rep_logs.and_then(|ls| {
                                ls.iter()
                                    .enumerate()
                                    .map(|(c, log)| {
                                        if log.incomplete || !log.errors.is_empty() {
                                            return Err(Error::Protocol(format!(
                                                "client {c} incomplete: {}",
                                                log.errors.join("; ")
                                            )));
                                        }
                                        if let Some(e) = log.records.iter().find_map(|r| r.error.as_ref()) {
                                            return Err(Error::Protocol(format!("client {c}: {e}")));
                                        }
                                        loopback_unit(spec, log, k, *r, c)
                                    })
                                    .collect::<Result<Vec<_>>>()
                            }) {
                                Ok(us) => units.extend(us),
                                Err(e) => {
                                    dropped += 1;
                                    out.dropped_reasons.push(format!("{} k={k} replication {r}: {e}", det.kind));
                                }
                            }
                        }
                    }
                }
            }
            log::info!(
                "{} k={k}: {} units, {dropped} dropped in {:.1}s",
                det.kind,
                units.len(),
                started.elapsed().as_secs_f64()
            );
            out.aggregates.push(aggregate(det.kind, k, spec, &units, &resources, dropped));
            out.units.extend(units);
            out.resources.extend(resources);
        }
    }
    if let Some(s) = server {
        s.shutdown();
    }
    Ok(out)
}

/// Runs `k` concurrent clients for each replication in `batch`.
fn run_batch(
    spec: &ExperimentSpec,
    det: &DetectorSpec,
    addr: &str,
    k: usize,
    batch: &[usize],
) -> Result<Vec<Result<Vec<ClientLog>>>> {
    let mut work = Vec::new();
    for &r in batch {
        for c in 0..k {
            let ts = spec.series(r, c)?;
            let mut cfg = ClientConfig::new(addr, det.clone(), spec.pacing_ms);
            cfg.session_id = format!("{}-k{k}-r{r}-c{c}", det.kind);
            cfg.stop_after_cp = if spec.early_stop { spec.last_cp() } else { None };
            work.push((r, cfg, ts.values));
        }
    }
    let logs: Vec<(usize, Result<ClientLog>)> = std::thread::scope(|s| {
        let handles: Vec<_> = work
            .iter()
            .map(|(r, cfg, values)| (*r, s.spawn(move || run_client(cfg, values))))
            .collect();
        handles
            .into_iter()
            .map(|(r, h)| (r, h.join().unwrap_or_else(|_| Err(Error::Protocol("client thread panicked".into())))))
            .collect()
    });
    Ok(batch
        .iter()
        .map(|&r| logs.iter().filter(|(lr, _)| *lr == r).map(|(_, l)| clone_result(l)).collect())
        .collect())
}

fn clone_result(r: &Result<ClientLog>) -> Result<ClientLog> {
    match r {
        Ok(l) => Ok(l.clone()),
        Err(e) => Err(Error::Protocol(e.to_string())),
    }
}

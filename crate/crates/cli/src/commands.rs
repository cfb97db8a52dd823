use std::io::Write;
use std::path::{Path, PathBuf};

use edgecpd::cusum::{CusumConfig, CvCache, CvKey, Sidedness};
use edgecpd::metrics::{export_report, run_experiment, ExperimentOutput, ExperimentSpec};
use edgecpd::protocol::{run_client, serve, ClientConfig, ServerConfig};
use edgecpd::rbocpd::{run_timelines, write_timelines};
use edgecpd::series::generate_with_changes;
use edgecpd::{CpInjection, DetectorKind, DetectorSpec, Execution, GeneratorSpec, TimeSeries};
use serde::Deserialize;
use serde_json::Value;

use crate::{CalibrateArgs, ClientArgs, Cli, Command, DetectArgs, ExperimentArgs, GenerateArgs, ReportArgs, ServeArgs, SidednessArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] edgecpd::Error),
    #[error("{dropped} replication(s) dropped; results are in {}", out.display())]
    Dropped { dropped: usize, out: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Dropped { .. } => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    let uses_config = matches!(cli.command, Command::Generate(_) | Command::Experiment(_));
    if cli.config.is_some() && !uses_config {
        return Err(usage("--config only applies to `generate` and `experiment`"));
    }
    match &cli.command {
        Command::Generate(a) => generate(&cli, a),
        Command::Calibrate(a) => calibrate(&cli, a),
        Command::Detect(a) => detect(&cli, a),
        Command::Serve(a) => serve_cmd(a),
        Command::Client(a) => client(&cli, a),
        Command::Experiment(a) => experiment(&cli, a),
        Command::Report(a) => report(&cli, a),
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))
}

fn detector_spec(name: &str, params: &str, seed: Option<u64>) -> Result<DetectorSpec> {
    let kind: DetectorKind = name.parse().map_err(usage)?;
    let mut params: Value = serde_json::from_str(params).map_err(|e| usage(format!("--params: {e}")))?;
    if !params.is_object() {
        return Err(usage("--params must be a JSON object"));
    }
    if let (DetectorKind::Bocd, Some(seed)) = (kind, seed) {
        params.as_object_mut().unwrap().entry("seed").or_insert(Value::from(seed));
    }
    let spec = DetectorSpec::new(kind, params);
    spec.parse().map_err(usage)?;
    Ok(spec)
}

#[derive(Deserialize)]
struct GenerateConfig {
    generator: GeneratorSpec,
    #[serde(default)]
    changes: Vec<CpInjection>,
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let (mut gen, mut changes) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let c: GenerateConfig = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            (c.generator, c.changes)
        }
        None => (GeneratorSpec::default(), vec![CpInjection { t_cp: 250, mean_shift: 1.0 }]),
    };
    if let Some(v) = a.length {
        gen.length = v;
    }
    if let Some(v) = &a.ar {
        gen.ar = v.clone();
    }
    if let Some(v) = &a.ma {
        gen.ma = v.clone();
    }
    if let Some(v) = a.innovation_std {
        gen.innovation_std = v;
    }
    if let Some(v) = a.burn_in {
        gen.burn_in = v;
    }
    if let Some(s) = cli.seed {
        gen.seed = s;
    }
    if a.t_cp.is_some() || a.mean_shift.is_some() {
        let t_cp = a.t_cp.unwrap_or(250);
        let mean_shift = a.mean_shift.unwrap_or(1.0);
        changes = vec![CpInjection { t_cp, mean_shift }];
    }
    changes.retain(|c| c.mean_shift != 0.0);
    gen.validate().map_err(usage)?;
    for c in &changes {
        if !(c.t_cp > 1 && c.t_cp <= gen.length) {
            return Err(usage(format!("t_cp {} outside (1, {}]", c.t_cp, gen.length)));
        }
        if !c.mean_shift.is_finite() {
            return Err(usage("mean shift must be finite"));
        }
    }
    let ts = generate_with_changes(&gen, &changes)?;
    let dir = out_dir(cli, ".");
    create_dir(&dir)?;
    let path = dir.join(&a.file);
    ts.write_csv(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<()> {
    if !(0.0..0.5).contains(&a.gamma) {
        return Err(usage(format!("--gamma {} not in [0, 0.5)", a.gamma)));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(format!("--alpha {} not in (0, 1)", a.alpha)));
    }
    if a.grid < 1_000 || a.replications < 10_000 {
        return Err(usage("--grid must be at least 1000 and --replications at least 10000"));
    }
    let sidedness = match a.sidedness {
        SidednessArg::OneSided => Sidedness::OneSided,
        SidednessArg::TwoSided => Sidedness::TwoSided,
    };
    let seed = cli.seed.unwrap_or(CusumConfig::default().cv_seed);
    let key = CvKey::new(a.gamma, a.alpha, sidedness, a.grid, a.replications, seed);
    let path = match &a.cv_cache {
        Some(p) => p.clone(),
        None => out_dir(cli, ".").join("cv_cache.csv"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let cache = CvCache::open(&path)?;
    let (cv, hit) = cache.get_or_calibrate(&key)?;
    println!("{cv} {}", if hit { "cached" } else { "computed" });
    Ok(())
}

fn detect(cli: &Cli, a: &DetectArgs) -> Result<()> {
    let spec = detector_spec(&a.detector, &a.params, cli.seed)?;
    let config = spec.parse().map_err(usage)?;
    let bocd = match (&config, a.timeline) {
        (edgecpd::detector::DetectorConfig::Bocd(c), true) => Some(c.clone()),
        (_, true) => return Err(usage("--timeline requires --detector bocd")),
        _ => None,
    };
    if a.timeline && cli.out.is_none() {
        return Err(usage("--timeline requires --out"));
    }
    let ts = TimeSeries::read_csv(&a.series)?;
    let cache = match &a.cv_cache {
        Some(p) => CvCache::open(p)?,
        None => CvCache::in_memory(),
    };
    let events = config.build(&cache)?.run(&ts.values)?;
    let mut body = String::from("detection_seq,cp_estimate,statistic_value,fallback\n");
    for e in &events {
        body.push_str(&format!("{},{},{},{}\n", e.detection_seq, e.cp_estimate, e.statistic_value, e.fallback));
    }
    match &cli.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("events.csv");
            std::fs::write(&path, body).map_err(|e| CliError::Runtime(e.into()))?;
            println!("{}", path.display());
        }
        None => print!("{body}"),
    }
    if let (Some(cfg), Some(dir)) = (bocd, &cli.out) {
        if ts.len() < cfg.training_len {
            return Err(CliError::Runtime(edgecpd::Error::Config(format!(
                "series of {} samples is shorter than the training length {}",
                ts.len(),
                cfg.training_len
            ))));
        }
        let lines = run_timelines(&ts.values, &ts.values[..cfg.training_len], &cfg, Execution::Parallel)?;
        let path = dir.join("bocd_timeline.csv");
        write_timelines(&path, &lines)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    if a.max_sessions == 0 {
        return Err(usage("--max-sessions must be at least 1"));
    }
    if a.compute_slots == Some(0) {
        return Err(usage("--compute-slots must be at least 1"));
    }
    let handle = serve(ServerConfig {
        bind: a.bind.clone(),
        max_sessions: a.max_sessions,
        cv_cache: a.cv_cache.clone(),
        compute_slots: a.compute_slots,
    })?;
    println!("listening on {}", handle.local_addr());
    let _ = std::io::stdout().flush();
    handle.wait();
    Ok(())
}

fn client(cli: &Cli, a: &ClientArgs) -> Result<()> {
    let spec = detector_spec(&a.detector, &a.params, cli.seed)?;
    if !(a.pacing_ms >= 0.0 && a.pacing_ms.is_finite()) {
        return Err(usage("--pacing-ms must be non-negative"));
    }
    let ts = TimeSeries::read_csv(&a.series)?;
    let mut cfg = ClientConfig::new(&a.target, spec, a.pacing_ms);
    cfg.session_id = a.session_id.clone();
    if a.early_stop {
        cfg.stop_after_cp = ts.change_points.iter().map(|c| c.t_cp as u64).max();
    }
    let log = run_client(&cfg, &ts.values)?;
    if let Some(path) = &a.log_out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        log.write_csv(path)?;
    }
    let replies = log.records.iter().filter(|r| r.reply_recv_ns.is_some()).count();
    println!("sent {} samples, {replies} replies, {} timeouts", log.records.len(), log.timeouts());
    for r in log.detections() {
        println!("detection at seq {} cp_index {}", r.seq, r.cp_index.map_or("-".into(), |c| c.to_string()));
    }
    if log.incomplete || !log.errors.is_empty() {
        return Err(CliError::Runtime(edgecpd::Error::Protocol(format!(
            "session incomplete: {}",
            log.errors.join("; ")
        ))));
    }
    Ok(())
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| usage("`experiment` needs --config <file>"))?;
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut spec: ExperimentSpec = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(r) = a.replications {
        spec.replications = r;
    }
    if let Some(k) = &a.clients {
        spec.clients = k.clone();
    }
    if let Some(p) = a.pacing_ms {
        spec.pacing_ms = p;
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(cache) = &spec.cv_cache {
        if cache.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            spec.cv_cache = Some(base.join(cache));
        }
    }
    spec.validate().map_err(usage)?;
    let out = out_dir(cli, "results");
    create_dir(&out)?;
    let result = run_experiment(&spec)?;
    result.write_json(&out.join(format!("{}.json", spec.name)))?;
    export_report(std::slice::from_ref(&result), &out)?;
    print_summary(&result);
    match result.dropped() {
        0 => Ok(()),
        dropped => {
            for r in &result.dropped_reasons {
                eprintln!("dropped: {r}");
            }
            Err(CliError::Dropped { dropped, out })
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2}"))
}

fn print_summary(out: &ExperimentOutput) {
    println!("{:<8} {:>3} {:>6} {:>6} {:>6} {:>8} {:>10} {:>8}", "detector", "k", "true", "false", "miss", "gap", "dd_ms", "dropped");
    for a in &out.aggregates {
        println!(
            "{:<8} {:>3} {:>6.3} {:>6.3} {:>6.3} {:>8} {:>10} {:>8}",
            a.detector.as_str(),
            a.k,
            a.true_alarm_rate,
            a.false_alarm_rate,
            a.miss_rate,
            fmt_opt(a.cp_gap_mean),
            fmt_opt(a.actual_dd_ms_mean),
            a.dropped
        );
    }
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let input = a
        .input
        .clone()
        .or_else(|| cli.out.clone())
        .ok_or_else(|| usage("`report` needs --input <dir> or --out <dir>"))?;
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&input) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => return Err(usage(format!("{}: {e}", input.display()))),
    };
    files.sort();
    let results: Vec<ExperimentOutput> = files
        .iter()
        .filter_map(|p| match ExperimentOutput::read_json(p) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect();
    if results.is_empty() {
        return Err(usage(format!("no experiment results in {}", input.display())));
    }
    let out = cli.out.clone().unwrap_or(input);
    for p in export_report(&results, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

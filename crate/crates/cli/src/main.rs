//! `edgecpd`: generate series, calibrate critical values, run detectors
//! offline or over the wire, and drive benchmark experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "edgecpd", version, about = "Streaming change-point detection and benchmarking")]
pub struct Cli {
    /// Base seed; every random output is a pure function of it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file: an experiment spec for `experiment`, or a file with
    /// `[generator]` and `changes` for `generate`.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an ARMA series with optional mean shifts as `seq,value` CSV
    /// plus a metadata sidecar.
    Generate(GenerateArgs),
    /// Calibrate a CUSUM critical value into the cache file.
    Calibrate(CalibrateArgs),
    /// Run a detector offline over a series CSV and print its events.
    Detect(DetectArgs),
    /// Host detectors behind the line protocol.
    Serve(ServeArgs),
    /// Stream a series to a server at a fixed pace and log every reply.
    Client(ClientArgs),
    /// Run a Monte Carlo experiment from a spec file.
    Experiment(ExperimentArgs),
    /// Turn experiment results into report CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Series length T.
    #[arg(long)]
    pub length: Option<usize>,
    /// AR coefficients, comma separated (empty for none).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub ar: Option<Vec<f64>>,
    /// MA coefficients, comma separated (empty for none).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub ma: Option<Vec<f64>>,
    /// Innovation standard deviation.
    #[arg(long)]
    pub innovation_std: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Change location (1-based).
    #[arg(long)]
    pub t_cp: Option<usize>,
    /// Mean shift added from t_cp on; 0 writes a series without a change.
    #[arg(long)]
    pub mean_shift: Option<f64>,
    /// File name inside --out.
    #[arg(long, default_value = "series.csv")]
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SidednessArg {
    OneSided,
    TwoSided,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 0.25)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = SidednessArg::TwoSided)]
    pub sidedness: SidednessArg,
    /// Brownian grid points N.
    #[arg(long, default_value_t = 10_000)]
    pub grid: usize,
    /// Monte Carlo replications.
    #[arg(long, default_value_t = 100_000)]
    pub replications: usize,
    /// Cache file (default: cv_cache.csv inside --out).
    #[arg(long, value_name = "FILE")]
    pub cv_cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Series CSV.
    #[arg(long, value_name = "FILE")]
    pub series: PathBuf,
    #[arg(long, default_value = "npcusum")]
    pub detector: String,
    /// Detector parameters as a JSON object.
    #[arg(long, default_value = "{}")]
    pub params: String,
    #[arg(long, value_name = "FILE")]
    pub cv_cache: Option<PathBuf>,
    /// Also write per-run BOCD timelines to bocd_timeline.csv in --out.
    #[arg(long)]
    pub timeline: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
    #[arg(long, default_value_t = 64)]
    pub max_sessions: usize,
    #[arg(long, value_name = "FILE")]
    pub cv_cache: Option<PathBuf>,
    /// Process at most this many samples at once.
    #[arg(long)]
    pub compute_slots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Server address, host:port.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 100.0)]
    pub pacing_ms: f64,
    /// Series CSV to stream.
    #[arg(long, value_name = "FILE")]
    pub series: PathBuf,
    #[arg(long, default_value = "npcusum")]
    pub detector: String,
    #[arg(long, default_value = "{}")]
    pub params: String,
    /// Per-sample log CSV.
    #[arg(long, value_name = "FILE")]
    pub log_out: Option<PathBuf>,
    #[arg(long, default_value = "s1")]
    pub session_id: String,
    /// Stop after the first detection at or past the last change in the
    /// series metadata.
    #[arg(long)]
    pub early_stop: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Override the replication count R.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Override the client counts k, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub clients: Option<Vec<usize>>,
    /// Override the pacing.
    #[arg(long)]
    pub pacing_ms: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding experiment result JSON files (default: --out).
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edgecpd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

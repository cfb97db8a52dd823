use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::experiment::ExperimentOutput;
use crate::detector::DetectorKind;
use crate::error::{Error, Result};

pub const TABLE1_FILE: &str = "table1.csv";
pub const DD_VS_GAP_FILE: &str = "fig2a_dd_vs_gap.csv";
pub const RESPONSE_FILE: &str = "fig2_response_vs_seq.csv";
pub const CPU_MEM_FILE: &str = "fig2_cpu_mem.csv";
pub const KSWEEP_FILE: &str = "ksweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub experiment: String,
    pub detector: DetectorKind,
    pub k: usize,
    pub replications: usize,
    pub dropped: usize,
    pub units: usize,
    pub true_rate: f64,
    pub false_rate: f64,
    pub miss_rate: f64,
    pub cp_gap: Option<f64>,
    pub cp_gap_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdGapRow {
    pub experiment: String,
    pub detector: DetectorKind,
    pub k: usize,
    pub replication: usize,
    pub client: usize,
    pub gap_points: Option<u64>,
    pub actual_dd_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub experiment: String,
    pub detector: DetectorKind,
    pub k: usize,
    pub replication: usize,
    pub client: usize,
    pub seq: u64,
    pub response_ms: Option<f64>,
    pub processing_ns: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuMemRow {
    pub experiment: String,
    pub detector: DetectorKind,
    pub k: usize,
    pub replication: usize,
    pub ts_ms: f64,
    pub cpu_percent: f64,
    pub rss_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub experiment: String,
    pub detector: DetectorKind,
    pub k: usize,
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

const TABLE1_DOC: &str = "# experiment,detector,k,replications,dropped,units,true_rate,false_rate,miss_rate,cp_gap,cp_gap_std | \
rates are fractions of the classified streams (R x k, dropped replications excluded); misses are not counted as false alarms; \
cp_gap = cp_estimate - t_cp in data points, over true alarms";
const DD_DOC: &str = "# experiment,detector,k,replication,client,gap_points,actual_dd_ms | \
one row per classified stream; gap and actual DD (reply receipt of the detection minus send of t_cp) are empty unless the stream raised a true alarm";
const RESPONSE_DOC: &str = "# experiment,detector,k,replication,client,seq,response_ms,processing_ns | \
response = reply receipt minus send on the client clock; processing = detector time on the server clock";
const CPU_MEM_DOC: &str = "# experiment,detector,k,replication,ts_ms,cpu_percent,rss_bytes | \
server threads only; cpu_percent is relative to one core; rss is the server process resident set";
const KSWEEP_DOC: &str = "# experiment,detector,k,actual_dd_ms_mean,actual_dd_ms_std,response_ms_p50,response_ms_p90,response_ms_p99,processing_ns_p50,cpu_percent_mean,cpu_percent_max,rss_bytes_mean,rss_bytes_max,core_count | \
one row per (detector, k); divide cpu_percent by core_count for a share of the machine";

fn write_csv<T: Serialize>(path: &Path, doc: &str, rows: &[T]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{doc}")?;
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        // Keep the header row even without data.
        drop(w);
        return Ok(());
    }
    w.flush()?;
    Ok(())
}

/// Reads any report CSV back, skipping the `#` documentation line.
pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes the accuracy summary, the delay and cost scatter tables and the
/// k-sweep. Returns the written paths.
pub fn export_report(results: &[ExperimentOutput], dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::Config("no experiment results to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut table1 = Vec::new();
    let mut dd = Vec::new();
    let mut resp = Vec::new();
    let mut cpu = Vec::new();
    let mut ksweep = Vec::new();
    for out in results {
        let exp = &out.name;
        for a in &out.aggregates {
            table1.push(Table1Row {
                experiment: exp.clone(),
                detector: a.detector,
                k: a.k,
                replications: a.replications,
                dropped: a.dropped,
                units: a.units,
                true_rate: a.true_alarm_rate,
                false_rate: a.false_alarm_rate,
                miss_rate: a.miss_rate,
                cp_gap: a.cp_gap_mean,
                cp_gap_std: a.cp_gap_std,
            });
            ksweep.push(KSweepRow {
                experiment: exp.clone(),
                detector: a.detector,
                k: a.k,
                actual_dd_ms_mean: a.actual_dd_ms_mean,
                actual_dd_ms_std: a.actual_dd_ms_std,
                response_ms_p50: a.response_ms_p50,
                response_ms_p90: a.response_ms_p90,
                response_ms_p99: a.response_ms_p99,
                processing_ns_p50: a.processing_ns_p50,
                cpu_percent_mean: a.cpu_percent_mean,
                cpu_percent_max: a.cpu_percent_max,
                rss_bytes_mean: a.rss_bytes_mean,
                rss_bytes_max: a.rss_bytes_max,
                core_count: a.core_count,
            });
        }
        for u in &out.units {
            dd.push(DdGapRow {
                experiment: exp.clone(),
                detector: u.detector,
                k: u.k,
                replication: u.replication,
                client: u.client,
                gap_points: u.gap,
                actual_dd_ms: u.actual_dd_ms,
            });
            resp.extend(u.timings.iter().map(|t| ResponseRow {
                experiment: exp.clone(),
                detector: u.detector,
                k: u.k,
                replication: u.replication,
                client: u.client,
                seq: t.seq,
                response_ms: t.response_ms,
                processing_ns: t.processing_ns,
            }));
        }
        cpu.extend(out.resources.iter().map(|r| CpuMemRow {
            experiment: exp.clone(),
            detector: r.detector,
            k: r.k,
            replication: r.replication,
            ts_ms: r.sample.ts_ns as f64 / 1e6,
            cpu_percent: r.sample.cpu_percent,
            rss_bytes: r.sample.rss_bytes,
        }));
    }
    let paths: Vec<PathBuf> =
        [TABLE1_FILE, DD_VS_GAP_FILE, RESPONSE_FILE, CPU_MEM_FILE, KSWEEP_FILE].iter().map(|f| dir.join(f)).collect();
    write_csv(&paths[0], TABLE1_DOC, &table1)?;
    write_csv(&paths[1], DD_DOC, &dd)?;
    write_csv(&paths[2], RESPONSE_DOC, &resp)?;
    write_csv(&paths[3], CPU_MEM_DOC, &cpu)?;
    write_csv(&paths[4], KSWEEP_DOC, &ksweep)?;
    Ok(paths)
}

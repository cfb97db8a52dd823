//! Experiment orchestration and evaluation: alarm classification, detection
//! delays, resource sampling and report export.

mod classify;
mod experiment;
mod report;
mod resources;

pub use classify::{actual_dd, classify_detection, first_detection, Detection, Outcome};
pub use experiment::{
    mean_std, percentile, run_experiment, AggregateResult, ExperimentMode, ExperimentOutput, ExperimentSpec,
    ResourceRow, SampleTiming, UnitResult,
};
pub use report::{
    export_report, read_report, CpuMemRow, DdGapRow, KSweepRow, ResponseRow, Table1Row, CPU_MEM_FILE,
    DD_VS_GAP_FILE, KSWEEP_FILE, RESPONSE_FILE, TABLE1_FILE,
};
pub use resources::{
    core_count, current_thread_cpu_ns, process_cpu_ns, process_rss_bytes, sample_resources, thread_cpu_ns,
    MetricSample, ResourceSampler, Scope, ThreadGroup, ThreadGuard,
};

//! Streaming change-point detection with a client/server benchmarking harness.
//!
//! Three online detectors are provided:
//!
//! * [`cusum`]: a windowed non-parametric CUSUM with a Bartlett long-run
//!   variance estimate, Monte Carlo critical values and an offline
//!   pre-processing test that validates every training window.
//! * [`arma`]: the same procedure run on the residuals of an ARMA(p, q) model
//!   re-estimated at every training boundary.
//! * [`rbocpd`]: a restarted Bayesian online detector over binarized streams,
//!   averaged over independent randomized runs.
//!
//! [`protocol`] hosts the detectors behind a newline-delimited TCP protocol and
//! drives them with paced clients; [`metrics`] turns the resulting logs into
//! alarm rates, detection delays, response times and resource usage.

pub mod arma;
pub mod clock;
pub mod cusum;
pub mod detector;
pub mod error;
pub mod event;
pub mod metrics;
pub mod par;
pub mod protocol;
pub mod rbocpd;
pub mod seed;
pub mod series;

pub use detector::{DetectorKind, DetectorSpec, OnlineDetector};
pub use error::{Error, Result};
pub use event::DetectionEvent;
pub use par::Execution;
pub use series::{CpInjection, GeneratorSpec, Sample, TimeSeries};

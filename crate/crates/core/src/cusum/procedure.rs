use std::collections::VecDeque;

use super::monitor::{CusumState, StepOutcome};
use super::offline::offline_cp_test;
use super::CusumConfig;
use crate::error::{Error, Result};
use crate::event::DetectionEvent;
use crate::series::Sample;

/// Maps raw samples to the series the CUSUM monitors.
///
/// `train` is called once per validated training window and returns the
/// transformed training series; `transform` then maps each monitored sample.
pub trait Preprocessor: Send {
    fn train(&mut self, raw: &[f64]) -> Result<Vec<f64>>;
    fn transform(&mut self, value: f64) -> f64;
    /// Whether the current window runs on a fallback representation.
    fn fell_back(&self) -> bool {
        false
    }
}

/// Raw data, i.e. the non-parametric CUSUM.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Preprocessor for Identity {
    fn train(&mut self, raw: &[f64]) -> Result<Vec<f64>> {
        Ok(raw.to_vec())
    }

    fn transform(&mut self, value: f64) -> f64 {
        value
    }
}

#[derive(Debug)]
enum Phase {
    Training,
    Monitoring(CusumState),
}

/// Streaming driver of the iterated train / validate / monitor cycle.
#[derive(Debug)]
pub struct WindowedCusum<P> {
    config: CusumConfig,
    cv: f64,
    pre: P,
    /// Training candidates while training, the last `m` raw samples while monitoring.
    history: VecDeque<f64>,
    phase: Phase,
    windows_started: usize,
    rejected_trainings: usize,
}

impl<P: Preprocessor> WindowedCusum<P> {
    pub fn new(config: CusumConfig, cv: f64, pre: P) -> Result<Self> {
        config.validate()?;
        if !(cv > 0.0 && cv.is_finite()) {
            return Err(Error::Config(format!("critical value must be positive, got {cv}")));
        }
        Ok(WindowedCusum {
            history: VecDeque::with_capacity(config.training_len + 1),
            config,
            cv,
            pre,
            phase: Phase::Training,
            windows_started: 0,
            rejected_trainings: 0,
        })
    }

    pub fn is_monitoring(&self) -> bool {
        matches!(self.phase, Phase::Monitoring(_))
    }

    /// Monitoring windows opened so far.
    pub fn windows_started(&self) -> usize {
        self.windows_started
    }

    /// Training windows refused by the offline test.
    pub fn rejected_trainings(&self) -> usize {
        self.rejected_trainings
    }

    pub fn state(&self) -> Option<&CusumState> {
        match &self.phase {
            Phase::Monitoring(s) => Some(s),
            Phase::Training => None,
        }
    }

    /// Feeds one sample. Errors (degenerate training variance) leave the
    /// detector usable: the offending window slides forward by one sample.
    pub fn push(&mut self, sample: Sample) -> Result<Option<DetectionEvent>> {
        let m = self.config.training_len;
        self.history.push_back(sample.value);
        match &mut self.phase {
            Phase::Training => {
                if self.history.len() > m {
                    self.history.pop_front();
                }
                if self.history.len() == m {
                    self.try_train()?;
                }
                Ok(None)
            }
            Phase::Monitoring(state) => {
                if self.history.len() > m {
                    self.history.pop_front();
                }
                let value = self.pre.transform(sample.value);
                let outcome = state.step(Sample { seq: sample.seq, value })?;
                match outcome {
                    StepOutcome::Detected(mut ev) => {
                        ev.fallback = self.pre.fell_back();
                        // The next training window starts after the alarm.
                        self.history.clear();
                        self.phase = Phase::Training;
                        Ok(Some(ev))
                    }
                    StepOutcome::Continue { .. } => {
                        if state.is_exhausted() {
                            self.retrain()?;
                        }
                        Ok(None)
                    }
                }
            }
        }
    }

    fn retrain(&mut self) -> Result<()> {
        self.phase = Phase::Training;
        if self.history.len() == self.config.training_len {
            self.try_train()?;
        }
        Ok(())
    }

    fn try_train(&mut self) -> Result<()> {
        let raw: Vec<f64> = self.history.iter().copied().collect();
        let res = offline_cp_test(&raw, self.config.alpha).and_then(|cp| match cp {
            Some(cp) => Err(Error::TrainingInvalid { cp_index: cp.index }),
            None => {
                let transformed = self.pre.train(&raw)?;
                CusumState::start_unchecked(&transformed, &self.config, self.cv)
            }
        });
        match res {
            Ok(state) => {
                self.phase = Phase::Monitoring(state);
                self.windows_started += 1;
                Ok(())
            }
            Err(Error::TrainingInvalid { cp_index }) => {
                // Keep only the samples after the estimated break.
                self.rejected_trainings += 1;
                self.history.drain(..cp_index - 1);
                Ok(())
            }
            Err(e) => {
                self.history.pop_front();
                Err(e)
            }
        }
    }
}

/// Runs the windowed procedure over a finite stream (seq = 1..=len).
pub fn run_windowed_procedure(
    stream: &[f64],
    config: &CusumConfig,
    cv: f64,
) -> Result<Vec<DetectionEvent>> {
    run_with(stream, WindowedCusum::new(config.clone(), cv, Identity)?)
}

pub fn run_with<P: Preprocessor>(
    stream: &[f64],
    mut det: WindowedCusum<P>,
) -> Result<Vec<DetectionEvent>> {
    let mut events = Vec::new();
    for (i, &value) in stream.iter().enumerate() {
        if let Some(ev) = det.push(Sample { seq: i as u64 + 1, value })? {
            events.push(ev);
        }
    }
    Ok(events)
}

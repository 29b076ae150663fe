//! Decode-energy measurement sessions.
//!
//! Each sample runs the decoder once while reading an energy counter, then
//! idles for the same wall-clock duration and reads the counter again. The
//! net sample is decode energy minus idle energy. Samples are taken one at a
//! time until the confidence-interval test
//!
//! ```text
//! 2 * (sigma / sqrt(m)) * t(alpha, m - 1) < beta * mean
//! ```
//!
//! holds (with `t` the two-sided Student-t critical value at `m - 1`
//! degrees of freedom), or until `m_max` samples have been taken.

mod counter;
pub mod tdist;

use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use counter::{
    counter_delta, EnergyCounter, RaplCounter, ScriptedCounter, DEFAULT_MOCK_RANGE_UJ,
};

#[derive(Debug, thiserror::Error)]
pub enum MeasurementError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("counter reading {reading} outside [0, {wrap_range})")]
    ReadingOutOfRange { reading: f64, wrap_range: f64 },
    #[error("energy counter: {0}")]
    Counter(String),
    #[error("decoder command failed: {0}")]
    Decoder(String),
    #[error("need at least 2 samples, have {0}")]
    InsufficientSamples(usize),
    #[error("mean net energy {0} J is not positive (idle exceeded decode)")]
    NonPositiveMean(f64),
}

/// Two-sided Student-t critical value: P(-t < T < t) = `confidence` with
/// `df` degrees of freedom.
pub fn t_critical(confidence: f64, df: u32) -> Result<f64, MeasurementError> {
    if df < 1 {
        return Err(MeasurementError::InvalidParameter(
            "degrees of freedom must be >= 1".into(),
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MeasurementError::InvalidParameter(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    Ok(tdist::critical_value(confidence, df as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub decode_energy_joules: f64,
    pub decode_duration_s: f64,
    pub idle_energy_joules: f64,
    pub net_energy_joules: f64,
}

impl EnergySample {
    pub fn new(decode_energy_joules: f64, idle_energy_joules: f64, decode_duration_s: f64) -> Self {
        EnergySample {
            decode_energy_joules,
            decode_duration_s,
            idle_energy_joules,
            net_energy_joules: decode_energy_joules - idle_energy_joules,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Probability that the true energy lies within the allowed deviation.
    pub alpha: f64,
    /// Allowed relative deviation of the mean.
    pub beta: f64,
    pub m_min: usize,
    pub m_max: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            alpha: 0.99,
            beta: 0.02,
            m_min: 5,
            m_max: 50,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        let bad = |msg: String| Err(MeasurementError::InvalidParameter(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.m_min < 2 {
            return bad(format!("m_min must be at least 2, got {}", self.m_min));
        }
        if self.m_max < self.m_min {
            return bad(format!(
                "m_max ({}) must be >= m_min ({})",
                self.m_max, self.m_min
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSession {
    pub config: SessionConfig,
    pub samples: Vec<EnergySample>,
}

impl MeasurementSession {
    pub fn new(config: SessionConfig) -> Result<Self, MeasurementError> {
        config.validate()?;
        Ok(MeasurementSession {
            config,
            samples: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: EnergySample) {
        self.samples.push(sample);
    }

    pub fn mean(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.net_energy_joules)
            .sum::<f64>()
            / self.samples.len() as f64
    }

    /// Sample standard deviation (n - 1 denominator) of the net energies.
    pub fn std_dev(&self) -> f64 {
        let m = self.samples.len();
        if m < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let ss: f64 = self
            .samples
            .iter()
            .map(|s| (s.net_energy_joules - mean).powi(2))
            .sum();
        (ss / (m - 1) as f64).sqrt()
    }

    /// Whether the confidence interval of the mean is narrower than the
    /// allowed deviation.
    pub fn confidence_satisfied(&self) -> Result<bool, MeasurementError> {
        let m = self.samples.len();
        if m < 2 {
            return Err(MeasurementError::InsufficientSamples(m));
        }
        let mean = self.mean();
        if mean <= 0.0 {
            return Err(MeasurementError::NonPositiveMean(mean));
        }
        if m < self.config.m_min {
            return Ok(false);
        }
        let t = t_critical(self.config.alpha, (m - 1) as u32)?;
        let width = 2.0 * self.std_dev() / (m as f64).sqrt() * t;
        Ok(width < self.config.beta * mean)
    }
}

/// The process being measured.
pub trait Workload {
    /// Runs one decode to completion and returns its wall-clock duration.
    fn decode(&mut self) -> Result<Duration, MeasurementError>;
    /// Stays idle for `duration`.
    fn idle(&mut self, duration: Duration) -> Result<(), MeasurementError>;
}

/// Runs a decoder invocation through `sh -c` and sleeps for the idle phase.
#[derive(Debug, Clone)]
pub struct CommandWorkload {
    command: String,
}

impl CommandWorkload {
    pub fn new(command: impl Into<String>) -> Self {
        CommandWorkload {
            command: command.into(),
        }
    }
}

impl Workload for CommandWorkload {
    fn decode(&mut self) -> Result<Duration, MeasurementError> {
        let start = Instant::now();
        let output = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .output()
            .map_err(|e| {
                MeasurementError::Decoder(format!("cannot start '{}': {e}", self.command))
            })?;
        let elapsed = start.elapsed();
        if !output.status.success() {
            return Err(MeasurementError::Decoder(format!(
                "'{}' exited with {}: {}",
                self.command,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(elapsed)
    }

    fn idle(&mut self, duration: Duration) -> Result<(), MeasurementError> {
        thread::sleep(duration);
        Ok(())
    }
}

/// A workload that takes no real time, for scripted counters.
#[derive(Debug, Clone, Copy)]
pub struct FixedWorkload {
    pub duration: Duration,
}

impl Workload for FixedWorkload {
    fn decode(&mut self) -> Result<Duration, MeasurementError> {
        Ok(self.duration)
    }

    fn idle(&mut self, _duration: Duration) -> Result<(), MeasurementError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session: MeasurementSession,
    pub mean_energy_joules: f64,
    pub std_dev_joules: f64,
    /// False when `m_max` samples were taken without passing the test.
    pub converged: bool,
}

impl SessionOutcome {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Stamped<'a> {
            version: &'a str,
            #[serde(flatten)]
            outcome: &'a SessionOutcome,
        }
        let mut s = serde_json::to_string_pretty(&Stamped {
            version: crate::VERSION,
            outcome: self,
        })
        .expect("session serializes");
        s.push('\n');
        s
    }
}

fn take_sample<W: Workload, C: EnergyCounter>(
    workload: &mut W,
    counter: &mut C,
) -> Result<EnergySample, MeasurementError> {
    let range = counter.wrap_range_joules();
    let before = counter.read_joules()?;
    let duration = workload.decode()?;
    let after = counter.read_joules()?;
    let decode = counter_delta(before, after, range)?;

    let before = counter.read_joules()?;
    workload.idle(duration)?;
    let after = counter.read_joules()?;
    let idle = counter_delta(before, after, range)?;

    Ok(EnergySample::new(decode, idle, duration.as_secs_f64()))
}

/// Samples until the confidence test passes or `m_max` is reached.
pub fn run_session<W: Workload, C: EnergyCounter>(
    workload: &mut W,
    counter: &mut C,
    config: SessionConfig,
) -> Result<SessionOutcome, MeasurementError> {
    let mut session = MeasurementSession::new(config)?;
    let mut converged = false;
    while session.len() < config.m_max {
        let sample = take_sample(workload, counter)?;
        if sample.decode_duration_s <= 0.0 {
            return Err(MeasurementError::Decoder(
                "decode took no measurable time".into(),
            ));
        }
        session.push(sample);
        if session.len() >= config.m_min && session.confidence_satisfied()? {
            converged = true;
            break;
        }
    }
    let mean = session.mean();
    if mean <= 0.0 {
        return Err(MeasurementError::NonPositiveMean(mean));
    }
    if !converged {
        log::warn!(
            "measurement did not converge within {} samples",
            config.m_max
        );
    }
    Ok(SessionOutcome {
        mean_energy_joules: mean,
        std_dev_joules: session.std_dev(),
        session,
        converged,
    })
}

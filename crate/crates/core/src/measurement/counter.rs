//! Cumulative energy counters.
//!
//! Both sources report microjoules and wrap back to zero at a declared
//! ceiling, the way the Linux powercap interface exposes RAPL domains
//! (`energy_uj` and `max_energy_range_uj`).

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use super::MeasurementError;

const MICRO: f64 = 1e-6;

/// Ceiling used by scripted counters that do not declare one.
pub const DEFAULT_MOCK_RANGE_UJ: f64 = 262_143_328_850.0;

/// A monotone energy counter that wraps at [`EnergyCounter::wrap_range_joules`].
pub trait EnergyCounter {
    fn read_joules(&mut self) -> Result<f64, MeasurementError>;
    fn wrap_range_joules(&self) -> f64;
}

/// Energy consumed between two readings of a wrapping counter, assuming at
/// most one wrap in between.
pub fn counter_delta(before: f64, after: f64, wrap_range: f64) -> Result<f64, MeasurementError> {
    if !(wrap_range.is_finite() && wrap_range > 0.0) {
        return Err(MeasurementError::InvalidParameter(format!(
            "wrap range must be positive, got {wrap_range}"
        )));
    }
    for r in [before, after] {
        if !(0.0..wrap_range).contains(&r) {
            return Err(MeasurementError::ReadingOutOfRange {
                reading: r,
                wrap_range,
            });
        }
    }
    Ok(if after >= before {
        after - before
    } else {
        after + wrap_range - before
    })
}

/// Reads a powercap zone such as `/sys/class/powercap/intel-rapl:0`.
#[derive(Debug, Clone)]
pub struct RaplCounter {
    energy_file: PathBuf,
    range_joules: f64,
}

impl RaplCounter {
    pub const DEFAULT_ZONE: &'static str = "/sys/class/powercap/intel-rapl:0";

    pub fn open(zone_dir: impl AsRef<Path>) -> Result<Self, MeasurementError> {
        let dir = zone_dir.as_ref();
        let range_uj = read_uj(&dir.join("max_energy_range_uj"))?;
        if range_uj <= 0.0 {
            return Err(MeasurementError::Counter(format!(
                "{}: max_energy_range_uj must be positive",
                dir.display()
            )));
        }
        let counter = RaplCounter {
            energy_file: dir.join("energy_uj"),
            range_joules: range_uj * MICRO,
        };
        // fail early if the energy file is unreadable
        read_uj(&counter.energy_file)?;
        Ok(counter)
    }
}

fn read_uj(path: &Path) -> Result<f64, MeasurementError> {
    let text = fs::read_to_string(path)
        .map_err(|e| MeasurementError::Counter(format!("{}: {e}", path.display())))?;
    text.trim()
        .parse::<u64>()
        .map(|v| v as f64)
        .map_err(|e| MeasurementError::Counter(format!("{}: {e}", path.display())))
}

impl EnergyCounter for RaplCounter {
    fn read_joules(&mut self) -> Result<f64, MeasurementError> {
        Ok(read_uj(&self.energy_file)? * MICRO)
    }

    fn wrap_range_joules(&self) -> f64 {
        self.range_joules
    }
}

/// Replays a fixed sequence of counter readings.
///
/// The text form has one reading in microjoules per line. Blank lines and
/// `#` comments are skipped; a line `max_energy_range_uj <value>` sets the
/// wrap ceiling.
#[derive(Debug, Clone)]
pub struct ScriptedCounter {
    readings: VecDeque<f64>,
    range_joules: f64,
}

impl ScriptedCounter {
    pub fn from_microjoules(readings: impl IntoIterator<Item = f64>, range_uj: f64) -> Self {
        ScriptedCounter {
            readings: readings.into_iter().map(|r| r * MICRO).collect(),
            range_joules: range_uj * MICRO,
        }
    }

    /// Builds the readings a session would observe for the given per-sample
    /// (decode, idle) energies in joules, starting at `start_uj` and wrapping
    /// at `range_uj`.
    pub fn from_phases(phases: &[(f64, f64)], start_uj: f64, range_uj: f64) -> Self {
        let mut acc = start_uj;
        let mut readings = Vec::with_capacity(phases.len() * 4);
        for &(decode, idle) in phases {
            readings.push(acc.rem_euclid(range_uj));
            acc += decode / MICRO;
            readings.push(acc.rem_euclid(range_uj));
            readings.push(acc.rem_euclid(range_uj));
            acc += idle / MICRO;
            readings.push(acc.rem_euclid(range_uj));
        }
        Self::from_microjoules(readings, range_uj)
    }

    pub fn parse(text: &str) -> Result<Self, MeasurementError> {
        let mut range_uj = DEFAULT_MOCK_RANGE_UJ;
        let mut readings = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |e: std::num::ParseFloatError| {
                MeasurementError::Counter(format!("mock script line {}: {e}", n + 1))
            };
            if let Some(rest) = line.strip_prefix("max_energy_range_uj") {
                range_uj = rest.trim().parse().map_err(bad)?;
            } else {
                readings.push(line.parse().map_err(bad)?);
            }
        }
        Ok(Self::from_microjoules(readings, range_uj))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeasurementError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| MeasurementError::Counter(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn remaining(&self) -> usize {
        self.readings.len()
    }
}

impl EnergyCounter for ScriptedCounter {
    fn read_joules(&mut self) -> Result<f64, MeasurementError> {
        self.readings
            .pop_front()
            .ok_or_else(|| MeasurementError::Counter("scripted counter exhausted".into()))
    }

    fn wrap_range_joules(&self) -> f64 {
        self.range_joules
    }
}

//! Estimation accuracy: mean relative error, k-fold cross-validation and
//! scatter export.
//!
//! Fold assignment uses ChaCha8 seeded through `seed_from_u64` and an
//! explicit Fisher-Yates shuffle with multiply-shift index sampling, so a
//! given `(seed, k, record order)` yields the same folds on every platform
//! and every build.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ModelKind;
use crate::dataset::{design_matrix, Dataset};
use crate::estimator::{fit, EnergyModel, FitConfig, FitError, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {estimates} estimates vs {measurements} measurements")]
    LengthMismatch {
        estimates: usize,
        measurements: usize,
    },
    #[error("no values to evaluate")]
    Empty,
    #[error("measured energy at position {index} is not positive ({value})")]
    NonPositiveMeasurement { index: usize, value: f64 },
    #[error("invalid fold setup: {0}")]
    Folds(String),
    #[error("fitting fold {fold} failed")]
    Fit { fold: usize, source: FitError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean of `|est - meas| / meas` over all positions.
pub fn mean_relative_error(estimates: &[f64], measurements: &[f64]) -> Result<f64, EvalError> {
    if estimates.len() != measurements.len() {
        return Err(EvalError::LengthMismatch {
            estimates: estimates.len(),
            measurements: measurements.len(),
        });
    }
    if estimates.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (index, (&est, &meas)) in estimates.iter().zip(measurements).enumerate() {
        if meas.is_nan() || meas <= 0.0 {
            return Err(EvalError::NonPositiveMeasurement { index, value: meas });
        }
        sum += ((est - meas) / meas).abs();
    }
    Ok(sum / estimates.len() as f64)
}

/// Optional grouping key for stratified fold assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratify {
    Sequence,
    Qp,
    Config,
    ToolOff,
}

impl std::str::FromStr for Stratify {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sequence" => Ok(Stratify::Sequence),
            "qp" => Ok(Stratify::Qp),
            "config" => Ok(Stratify::Config),
            "tool_off" => Ok(Stratify::ToolOff),
            _ => Err(format!(
                "unknown stratification key '{s}' (sequence, qp, config, tool_off)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub seed: u64,
    pub k: usize,
    /// Record ids in dataset order.
    pub ids: Vec<String>,
    /// Fold index of each record, parallel to `ids`.
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id).map(|p| self.folds[p])
    }

    /// Record positions belonging to `fold`, in dataset order.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len())
            .filter(|&i| self.folds[i] == fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniform index in `0..bound` by multiply-shift.
fn below(rng: &mut ChaCha8Rng, bound: usize) -> usize {
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

fn shuffle(rng: &mut ChaCha8Rng, items: &mut [usize]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Random near-equal partition of the records into `k` folds.
pub fn make_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    make_folds_stratified(d, k, seed, None)
}

/// Like [`make_folds`]; with a stratification key, each stratum is shuffled
/// separately and dealt round-robin across folds.
pub fn make_folds_stratified(
    d: &Dataset,
    k: usize,
    seed: u64,
    stratify: Option<Stratify>,
) -> Result<FoldAssignment, EvalError> {
    let n = d.len();
    if k < 2 {
        return Err(EvalError::Folds(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(EvalError::Folds(format!(
            "{n} records cannot fill {k} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; n];

    match stratify {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            shuffle(&mut rng, &mut order);
            let (base, extra) = (n / k, n % k);
            let mut pos = 0;
            for f in 0..k {
                let size = base + usize::from(f < extra);
                for &rec in &order[pos..pos + size] {
                    folds[rec] = f;
                }
                pos += size;
            }
        }
        Some(key) => {
            let mut strata: Vec<Vec<usize>> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            for (i, r) in d.records().iter().enumerate() {
                let label = match key {
                    Stratify::Sequence => r.sequence.clone(),
                    Stratify::Qp => r.qp.to_string(),
                    Stratify::Config => r.config.clone(),
                    Stratify::ToolOff => r.tool_off.map(|t| t.to_string()).unwrap_or_default(),
                };
                let s = *index.entry(label).or_insert_with(|| {
                    strata.push(Vec::new());
                    strata.len() - 1
                });
                strata[s].push(i);
            }
            let mut pos = 0;
            for stratum in &mut strata {
                shuffle(&mut rng, stratum);
                for &rec in stratum.iter() {
                    folds[rec] = pos % k;
                    pos += 1;
                }
            }
        }
    }

    Ok(FoldAssignment {
        seed,
        k,
        ids: d.records().iter().map(|r| r.id.clone()).collect(),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEstimate {
    pub id: String,
    pub measured_joules: f64,
    pub estimated_joules: f64,
    pub relative_error: f64,
    pub fold_index: usize,
}

/// Settings echoed into a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub k: usize,
    pub seed: Option<u64>,
    pub stratify: Option<Stratify>,
    pub fit: Option<FitConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: String,
    pub setup_label: String,
    pub catalog_kind: ModelKind,
    pub fold_count: usize,
    pub seed: Option<u64>,
    pub config: EvalSettings,
    pub epsilon_bar: f64,
    pub per_record: Vec<RecordEstimate>,
}

impl EvaluationReport {
    fn assemble(
        d: &Dataset,
        estimates: &[f64],
        folds: &[usize],
        config: EvalSettings,
    ) -> Result<Self, EvalError> {
        let measured: Vec<f64> = d.records().iter().map(|r| r.energy_joules).collect();
        let epsilon_bar = mean_relative_error(estimates, &measured)?;
        let per_record = d
            .records()
            .iter()
            .zip(estimates)
            .zip(folds)
            .map(|((r, &est), &fold_index)| RecordEstimate {
                id: r.id.clone(),
                measured_joules: r.energy_joules,
                estimated_joules: est,
                relative_error: ((est - r.energy_joules) / r.energy_joules).abs(),
                fold_index,
            })
            .collect();
        Ok(EvaluationReport {
            version: crate::VERSION.to_string(),
            setup_label: d.setup().to_string(),
            catalog_kind: d.catalog_kind(),
            fold_count: config.k,
            seed: config.seed,
            config,
            epsilon_bar,
            per_record,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// k-fold cross-validation: every record is estimated by a model fitted on
/// the other folds, and the mean relative error is pooled over all records.
pub fn cross_validate(
    d: &Dataset,
    k: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<EvaluationReport, EvalError> {
    cross_validate_stratified(d, k, seed, None, config)
}

pub fn cross_validate_stratified(
    d: &Dataset,
    k: usize,
    seed: u64,
    stratify: Option<Stratify>,
    config: &FitConfig,
) -> Result<EvaluationReport, EvalError> {
    let assignment = make_folds_stratified(d, k, seed, stratify)?;
    let (a, e) = design_matrix(d).map_err(|err| EvalError::Fit {
        fold: 0,
        source: err.into(),
    })?;
    let mut estimates = vec![0.0; d.len()];

    for fold in 0..k {
        let test = assignment.members(fold);
        let train: Vec<usize> = (0..d.len())
            .filter(|&i| assignment.folds[i] != fold)
            .collect();
        let a_train = a.select_rows(&train);
        let e_train = DVector::from_iterator(train.len(), train.iter().map(|&i| e[i]));
        let fitted =
            fit(&a_train, &e_train, config).map_err(|source| EvalError::Fit { fold, source })?;
        let coeffs = DVector::from_column_slice(&fitted.coefficients);
        for &i in &test {
            estimates[i] = a.row(i).transpose().dot(&coeffs);
        }
    }

    EvaluationReport::assemble(
        d,
        &estimates,
        &assignment.folds,
        EvalSettings {
            k,
            seed: Some(seed),
            stratify,
            fit: Some(config.clone()),
        },
    )
}

/// Applies a fitted model to every record (no refitting).
pub fn evaluate_model(d: &Dataset, model: &EnergyModel) -> Result<EvaluationReport, EvalError> {
    if model.catalog_kind() != d.catalog_kind() {
        return Err(EvalError::Model(ModelError::Format(format!(
            "model is {} but dataset is {}",
            model.catalog_kind(),
            d.catalog_kind()
        ))));
    }
    let estimates = d
        .records()
        .iter()
        .map(|r| model.predict(&r.features))
        .collect::<Result<Vec<_>, _>>()?;
    EvaluationReport::assemble(
        d,
        &estimates,
        &vec![0; d.len()],
        EvalSettings {
            k: 1,
            seed: None,
            stratify: None,
            fit: None,
        },
    )
}

/// Path of the identity-line file written next to a scatter file.
pub fn identity_path(scatter: &Path) -> PathBuf {
    let stem = scatter
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scatter");
    scatter.with_file_name(format!("{stem}_identity.csv"))
}

pub fn scatter_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("id,E_measured_joules,E_estimated_joules,relative_error\n");
    for r in &report.per_record {
        let id = if r.id.contains([',', '"', '\n']) {
            format!("\"{}\"", r.id.replace('"', "\"\""))
        } else {
            r.id.clone()
        };
        writeln!(
            out,
            "{id},{},{},{}",
            r.measured_joules, r.estimated_joules, r.relative_error
        )
        .expect("string write");
    }
    out
}

/// Endpoints of the `E = E_hat` reference line spanning the measured range.
pub fn identity_csv(report: &EvaluationReport) -> String {
    let (lo, hi) = report
        .per_record
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.measured_joules), hi.max(r.measured_joules))
        });
    format!("E_joules,E_hat_joules\n{lo},{lo}\n{hi},{hi}\n")
}

/// Writes the (E, E_hat) pairs to `path` and the identity line next to it.
/// Returns the identity-line path.
pub fn scatter_export(
    report: &EvaluationReport,
    path: impl AsRef<Path>,
) -> Result<PathBuf, EvalError> {
    if report.per_record.is_empty() {
        return Err(EvalError::Empty);
    }
    let path = path.as_ref();
    let line = identity_path(path);
    crate::write_atomic(path, scatter_csv(report))?;
    crate::write_atomic(&line, identity_csv(report))?;
    Ok(line)
}

//! The linear energy model and its coefficient fit.
//!
//! Estimated energy is the dot product of the per-feature coefficients with
//! the feature counts. Coefficients are fitted by bound-constrained linear
//! least squares (nonnegative by default) and the result satisfies the
//! first-order optimality conditions checked by [`kkt_violation`].

mod bvls;

use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::{FeatureCatalog, ModelKind};
use crate::dataset::{design_matrix, Dataset, DatasetError};

/// Relative gradient tolerance of the optimality contract.
pub const KKT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("infeasible bounds for coefficient {index}: [{lower}, {upper}]")]
    InfeasibleBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("no convergence within {0} iterations")]
    IterationLimit(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("feature vector has {got} entries, model expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A coefficient bound, either shared by every column or given per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// No bound (minus infinity for lower bounds, plus infinity for upper).
    Unbounded,
    Scalar(f64),
    PerColumn(Vec<f64>),
}

impl Bound {
    fn expand(&self, n: usize, unbounded: f64) -> Result<Vec<f64>, FitError> {
        let v = match self {
            Bound::Unbounded => vec![unbounded; n],
            Bound::Scalar(s) => vec![*s; n],
            Bound::PerColumn(v) if v.len() == n => v.clone(),
            Bound::PerColumn(v) => {
                return Err(FitError::Dimension(format!(
                    "{} bounds for {n} coefficients",
                    v.len()
                )))
            }
        };
        if v.iter().any(|b| b.is_nan()) {
            return Err(FitError::NonFinite("bounds"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lower: Bound,
    pub upper: Bound,
    /// Bound variables are released while their relative KKT violation
    /// exceeds this.
    pub convergence_tol: f64,
    /// Cap on free-set subproblem solves.
    pub max_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lower: Bound::Scalar(0.0),
            upper: Bound::Unbounded,
            convergence_tol: 1e-10,
            max_iterations: 500,
        }
    }
}

impl FitConfig {
    /// Drops the lower bound (the `--allow-negative` mode).
    pub fn allow_negative(mut self) -> Self {
        self.lower = Bound::Unbounded;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    /// `||A e - E||_2` on the training data.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Coefficients resting on a bound.
    pub active_bounds: usize,
    /// Columns that are identically zero in the training data.
    pub zero_support: Vec<usize>,
    /// Largest KKT violation relative to `||A^T E||_inf`.
    pub kkt_violation: f64,
}

/// Coefficients from [`fit`], not yet tied to a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub metadata: FitMetadata,
}

/// Relative first-order optimality violation of `e` for the bounded
/// problem `min ||A e - b||^2, lower <= e <= upper`.
///
/// Free coefficients contribute `|g_j|`, coefficients at a bound contribute
/// the inward-pointing part of the gradient; the maximum is divided by
/// `||A^T b||_inf`.
pub fn kkt_violation(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    e: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> f64 {
    let ev = DVector::from_column_slice(e);
    let g = a.tr_mul(&(a * &ev - b));
    let scale = a.tr_mul(b).amax();
    let worst = (0..e.len())
        .map(|j| {
            let at_lower = e[j] <= lower[j];
            let at_upper = e[j] >= upper[j];
            match (at_lower, at_upper) {
                (true, true) => 0.0,
                (true, false) => (-g[j]).max(0.0),
                (false, true) => g[j].max(0.0),
                (false, false) => g[j].abs(),
            }
        })
        .fold(0.0, f64::max);
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Bound-constrained least-squares fit of `a e ~ b`.
pub fn fit(a: &DMatrix<f64>, b: &DVector<f64>, config: &FitConfig) -> Result<LinearFit, FitError> {
    let (n, j) = a.shape();
    if n == 0 || j == 0 {
        return Err(FitError::Dimension(format!("design matrix is {n}x{j}")));
    }
    if b.len() != n {
        return Err(FitError::Dimension(format!(
            "{n} rows but {} targets",
            b.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("design matrix"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite("target vector"));
    }
    if config.convergence_tol.is_nan() || config.convergence_tol <= 0.0 {
        return Err(FitError::Config("convergence_tol must be positive".into()));
    }
    if config.max_iterations == 0 {
        return Err(FitError::Config("max_iterations must be at least 1".into()));
    }
    let lower = config.lower.expand(j, f64::NEG_INFINITY)?;
    let upper = config.upper.expand(j, f64::INFINITY)?;
    for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
        if lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(FitError::InfeasibleBounds {
                index,
                lower: lo,
                upper: hi,
            });
        }
    }

    let norms: Vec<f64> = (0..j).map(|c| a.column(c).norm()).collect();
    let zero_support: Vec<usize> = (0..j).filter(|&c| norms[c] == 0.0).collect();
    let support: Vec<usize> = (0..j).filter(|&c| norms[c] > 0.0).collect();

    // zero columns take the smallest-magnitude feasible value
    let mut e: Vec<f64> = (0..j).map(|c| 0.0f64.clamp(lower[c], upper[c])).collect();
    let mut iterations = 0;

    if !support.is_empty() {
        let k = support.len();
        let mut scaled = a.select_columns(&support);
        for (i, &c) in support.iter().enumerate() {
            scaled.column_mut(i).unscale_mut(norms[c]);
        }
        let inv_scale: Vec<f64> = support.iter().map(|&c| 1.0 / norms[c]).collect();
        let lo: Vec<f64> = support.iter().map(|&c| lower[c] * norms[c]).collect();
        let hi: Vec<f64> = support.iter().map(|&c| upper[c] * norms[c]).collect();

        let reduced = bvls::Reduced::new(scaled, b, inv_scale);
        // e-space gradient is the scaled-space gradient times the column norm
        let grad_scale: Vec<f64> = support.iter().map(|&c| norms[c]).collect();
        let at_b_max = reduced
            .gradient(&DVector::zeros(k))
            .iter()
            .zip(&grad_scale)
            .map(|(g, s)| (g * s).abs())
            .fold(0.0, f64::max);
        let tol = config.convergence_tol * at_b_max;

        let sol = bvls::solve(&reduced, &lo, &hi, tol, &grad_scale, config.max_iterations)?;
        iterations = sol.iterations;
        for (i, &c) in support.iter().enumerate() {
            e[c] = (sol.x[i] / norms[c]).clamp(lower[c], upper[c]);
            // land exactly on bounds that the scaled solution sits on
            if sol.x[i] == lo[i] {
                e[c] = lower[c];
            } else if sol.x[i] == hi[i] {
                e[c] = upper[c];
            }
        }
    }

    let ev = DVector::from_column_slice(&e);
    let residual_norm = (a * &ev - b).norm();
    let active_bounds = support
        .iter()
        .filter(|&&c| e[c] <= lower[c] || e[c] >= upper[c])
        .count();
    let kkt = kkt_violation(a, b, &e, &lower, &upper);
    if kkt > KKT_TOLERANCE {
        log::warn!("fit finished with relative KKT violation {kkt:.3e}");
    }
    Ok(LinearFit {
        coefficients: e,
        metadata: FitMetadata {
            residual_norm,
            iterations,
            active_bounds,
            zero_support,
            kkt_violation: kkt,
        },
    })
}

/// Fitted coefficients for one catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    catalog_kind: ModelKind,
    coefficients: Vec<f64>,
    metadata: Option<FitMetadata>,
}

impl EnergyModel {
    pub fn new(catalog_kind: ModelKind, coefficients: Vec<f64>) -> Result<Self, ModelError> {
        let expected = FeatureCatalog::build(catalog_kind).column_count();
        if coefficients.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                got: coefficients.len(),
            });
        }
        Ok(EnergyModel {
            catalog_kind,
            coefficients,
            metadata: None,
        })
    }

    pub fn catalog_kind(&self) -> ModelKind {
        self.catalog_kind
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn metadata(&self) -> Option<&FitMetadata> {
        self.metadata.as_ref()
    }

    /// Estimated energy in joules for one feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.coefficients.len() {
            return Err(ModelError::LengthMismatch {
                expected: self.coefficients.len(),
                got: features.len(),
            });
        }
        Ok(self
            .coefficients
            .iter()
            .zip(features)
            .map(|(e, n)| e * n)
            .sum())
    }

    pub fn to_json(&self) -> String {
        let catalog = FeatureCatalog::build(self.catalog_kind);
        let coefficients: IndexMap<&str, f64> = catalog
            .column_names()
            .zip(self.coefficients.iter().copied())
            .collect();
        let zero_support_columns = self
            .metadata
            .as_ref()
            .map(|m| {
                m.zero_support
                    .iter()
                    .map(|&c| catalog.columns()[c].name.clone())
                    .collect()
            })
            .unwrap_or_default();
        let file = ModelFile {
            version: crate::VERSION.to_string(),
            catalog_kind: self.catalog_kind,
            coefficients: coefficients
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            fit: self.metadata.clone(),
            zero_support_columns,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let catalog = FeatureCatalog::build(file.catalog_kind);
        if file.coefficients.len() != catalog.column_count() {
            return Err(ModelError::Format(format!(
                "{} coefficients for a {}-column {} catalog",
                file.coefficients.len(),
                catalog.column_count(),
                file.catalog_kind
            )));
        }
        let coefficients = catalog
            .column_names()
            .map(|name| {
                file.coefficients
                    .get(name)
                    .copied()
                    .ok_or_else(|| ModelError::Format(format!("missing coefficient '{name}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EnergyModel {
            catalog_kind: file.catalog_kind,
            coefficients,
            metadata: file.fit,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        crate::write_atomic(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    catalog_kind: ModelKind,
    coefficients: IndexMap<String, f64>,
    #[serde(default)]
    fit: Option<FitMetadata>,
    #[serde(default)]
    zero_support_columns: Vec<String>,
}

/// Fits a model to every record of `d`.
pub fn fit_dataset(d: &Dataset, config: &FitConfig) -> Result<EnergyModel, FitError> {
    let (a, b) = design_matrix(d)?;
    let result = fit(&a, &b, config)?;
    Ok(EnergyModel {
        catalog_kind: d.catalog_kind(),
        coefficients: result.coefficients,
        metadata: Some(result.metadata),
    })
}

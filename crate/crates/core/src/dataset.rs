//! Per-bitstream records and their CSV representation.
//!
//! A dataset file has eight fixed metadata columns followed by one column per
//! catalog feature, in catalog order:
//!
//! ```text
//! id,sequence,config,qp,tool_off,energy_joules,energy_stddev,sample_count,eo,i_slice,...
//! ```
//!
//! Header drift (a missing, extra or reordered column) is a hard error.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::{CountingLevel, FeatureCatalog, ModelKind};

pub const METADATA_COLUMNS: [&str; 8] = [
    "id",
    "sequence",
    "config",
    "qp",
    "tool_off",
    "energy_joules",
    "energy_stddev",
    "sample_count",
];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("schema error at column '{column}': {message}")]
    Schema { column: String, message: String },
    #[error("validation error in row {row}, field '{field}': {message}")]
    Validation {
        row: usize,
        field: String,
        message: String,
    },
    #[error("catalog mismatch: {0} vs {1}")]
    CatalogMismatch(ModelKind, ModelKind),
    #[error("duplicate record id '{0}'")]
    DuplicateId(String),
    #[error("dataset is empty")]
    Empty,
}

/// Coding tools that may be switched off when encoding extra training streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tool {
    Alf,
    Bdof,
    Dmvr,
    Isp,
    Lfnst,
    Mip,
    Mts,
    Tpm,
}

impl Tool {
    pub const ALL: [Tool; 8] = [
        Tool::Alf,
        Tool::Bdof,
        Tool::Dmvr,
        Tool::Isp,
        Tool::Lfnst,
        Tool::Mip,
        Tool::Mts,
        Tool::Tpm,
    ];

    pub fn acronym(self) -> &'static str {
        match self {
            Tool::Alf => "ALF",
            Tool::Bdof => "BDOF",
            Tool::Dmvr => "DMVR",
            Tool::Isp => "ISP",
            Tool::Lfnst => "LFNST",
            Tool::Mip => "MIP",
            Tool::Mts => "MTS",
            Tool::Tpm => "TPM",
        }
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.acronym())
    }
}

impl FromStr for Tool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tool::ALL
            .into_iter()
            .find(|t| t.acronym().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown tool acronym '{s}'"))
    }
}

/// How a dataset was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setup {
    #[serde(rename = "CTC")]
    Ctc,
    ToolOff,
    Merge,
    Synthetic,
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setup::Ctc => "CTC",
            Setup::ToolOff => "ToolOff",
            Setup::Merge => "Merge",
            Setup::Synthetic => "Synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamRecord {
    pub id: String,
    pub sequence: String,
    /// Encoder configuration label such as RA, AI or LD.
    pub config: String,
    pub qp: i32,
    pub tool_off: Option<Tool>,
    /// Mean measured decoding energy.
    pub energy_joules: f64,
    pub energy_stddev: f64,
    pub sample_count: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    catalog_kind: ModelKind,
    setup: Setup,
    records: Vec<BitstreamRecord>,
}

impl Dataset {
    /// Validates `records` against the catalog and wraps them.
    pub fn new(
        catalog_kind: ModelKind,
        setup: Setup,
        records: Vec<BitstreamRecord>,
    ) -> Result<Self, DatasetError> {
        let catalog = FeatureCatalog::build(catalog_kind);
        let mut seen = HashSet::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            validate_record(&catalog, i + 1, rec)?;
            if !seen.insert(rec.id.as_str()) {
                return Err(DatasetError::DuplicateId(rec.id.clone()));
            }
        }
        Ok(Dataset {
            catalog_kind,
            setup,
            records,
        })
    }

    pub fn catalog_kind(&self) -> ModelKind {
        self.catalog_kind
    }

    pub fn setup(&self) -> Setup {
        self.setup
    }

    pub fn records(&self) -> &[BitstreamRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_setup(mut self, setup: Setup) -> Self {
        self.setup = setup;
        self
    }

    /// Records at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            catalog_kind: self.catalog_kind,
            setup: self.setup,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let catalog = FeatureCatalog::build(self.catalog_kind);
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<&str> = METADATA_COLUMNS
            .iter()
            .copied()
            .chain(catalog.column_names())
            .collect();
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for rec in &self.records {
            row.clear();
            row.push(rec.id.clone());
            row.push(rec.sequence.clone());
            row.push(rec.config.clone());
            row.push(rec.qp.to_string());
            row.push(
                rec.tool_off
                    .map(|t| t.acronym().to_string())
                    .unwrap_or_default(),
            );
            row.push(rec.energy_joules.to_string());
            row.push(rec.energy_stddev.to_string());
            row.push(rec.sample_count.to_string());
            row.extend(rec.features.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        crate::write_atomic(path, self.to_csv_string())?;
        Ok(())
    }
}

fn validate_record(
    catalog: &FeatureCatalog,
    row: usize,
    rec: &BitstreamRecord,
) -> Result<(), DatasetError> {
    let invalid = |field: &str, message: String| DatasetError::Validation {
        row,
        field: field.to_string(),
        message,
    };
    if rec.id.is_empty() {
        return Err(invalid("id", "empty id".into()));
    }
    if !(rec.energy_joules.is_finite() && rec.energy_joules > 0.0) {
        return Err(invalid(
            "energy_joules",
            format!("must be positive, got {}", rec.energy_joules),
        ));
    }
    if !(rec.energy_stddev.is_finite() && rec.energy_stddev >= 0.0) {
        return Err(invalid(
            "energy_stddev",
            format!("must be nonnegative, got {}", rec.energy_stddev),
        ));
    }
    if rec.sample_count < 1 {
        return Err(invalid("sample_count", "must be at least 1".into()));
    }
    if rec.features.len() != catalog.column_count() {
        return Err(invalid(
            "features",
            format!(
                "expected {} values, got {}",
                catalog.column_count(),
                rec.features.len()
            ),
        ));
    }
    for (col, &v) in catalog.columns().iter().zip(&rec.features) {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid(
                &col.name,
                format!("count must be nonnegative, got {v}"),
            ));
        }
        if col.level != CountingLevel::PelLog && v.fract() != 0.0 {
            return Err(invalid(
                &col.name,
                format!("count must be integral, got {v}"),
            ));
        }
    }
    Ok(())
}

fn check_header(header: &csv::StringRecord, expected: &[&str]) -> Result<(), DatasetError> {
    let schema = |column: &str, message: &str| DatasetError::Schema {
        column: column.to_string(),
        message: message.to_string(),
    };
    let got: Vec<&str> = header.iter().collect();
    for (i, want) in expected.iter().enumerate() {
        match got.get(i) {
            Some(have) if have == want => continue,
            _ if !got.contains(want) => return Err(schema(want, "missing column")),
            Some(have) if !expected.contains(have) => {
                return Err(schema(have, "unexpected column"));
            }
            _ => return Err(schema(want, "column out of order")),
        }
    }
    if let Some(extra) = got.get(expected.len()) {
        return Err(schema(extra, "unexpected column"));
    }
    Ok(())
}

fn parse_field<T: FromStr>(row: usize, field: &str, raw: &str) -> Result<T, DatasetError> {
    raw.trim().parse().map_err(|_| DatasetError::Validation {
        row,
        field: field.to_string(),
        message: format!("cannot parse '{raw}'"),
    })
}

/// Reads and validates a dataset from any CSV source.
pub fn read_dataset<R: Read>(reader: R, catalog_kind: ModelKind) -> Result<Dataset, DatasetError> {
    let catalog = FeatureCatalog::build(catalog_kind);
    let expected: Vec<&str> = METADATA_COLUMNS
        .iter()
        .copied()
        .chain(catalog.column_names())
        .collect();

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    check_header(rdr.headers()?, &expected)?;

    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let raw = result?;
        let tool_off = match raw[4].trim() {
            "" => None,
            s => Some(
                s.parse::<Tool>()
                    .map_err(|message| DatasetError::Validation {
                        row,
                        field: "tool_off".into(),
                        message,
                    })?,
            ),
        };
        let features = (0..catalog.column_count())
            .map(|c| parse_field(row, expected[8 + c], &raw[8 + c]))
            .collect::<Result<Vec<f64>, _>>()?;
        records.push(BitstreamRecord {
            id: raw[0].to_string(),
            sequence: raw[1].to_string(),
            config: raw[2].to_string(),
            qp: parse_field(row, "qp", &raw[3])?,
            tool_off,
            energy_joules: parse_field(row, "energy_joules", &raw[5])?,
            energy_stddev: parse_field(row, "energy_stddev", &raw[6])?,
            sample_count: parse_field(row, "sample_count", &raw[7])?,
            features,
        });
    }

    let setup = infer_setup(&records);
    Dataset::new(catalog_kind, setup, records)
}

fn infer_setup(records: &[BitstreamRecord]) -> Setup {
    let tool_off = records.iter().filter(|r| r.tool_off.is_some()).count();
    match tool_off {
        0 => Setup::Ctc,
        n if n == records.len() => Setup::ToolOff,
        _ => Setup::Merge,
    }
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    catalog_kind: ModelKind,
) -> Result<Dataset, DatasetError> {
    read_dataset(File::open(path)?, catalog_kind)
}

/// Concatenates two datasets into a Merge setup, `a` first.
pub fn merge_datasets(a: &Dataset, b: &Dataset) -> Result<Dataset, DatasetError> {
    if a.catalog_kind != b.catalog_kind {
        return Err(DatasetError::CatalogMismatch(
            a.catalog_kind,
            b.catalog_kind,
        ));
    }
    let ids: HashSet<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(dup) = b.records.iter().find(|r| ids.contains(r.id.as_str())) {
        return Err(DatasetError::DuplicateId(dup.id.clone()));
    }
    let mut records = a.records.clone();
    records.extend(b.records.iter().cloned());
    Ok(Dataset {
        catalog_kind: a.catalog_kind,
        setup: Setup::Merge,
        records,
    })
}

/// Feature matrix (one row per record) and measured energy vector.
pub fn design_matrix(d: &Dataset) -> Result<(DMatrix<f64>, DVector<f64>), DatasetError> {
    if d.is_empty() {
        return Err(DatasetError::Empty);
    }
    let cols = d.records[0].features.len();
    let a = DMatrix::from_fn(d.len(), cols, |r, c| d.records[r].features[c]);
    let e = DVector::from_iterator(d.len(), d.records.iter().map(|r| r.energy_joules));
    Ok((a, e))
}

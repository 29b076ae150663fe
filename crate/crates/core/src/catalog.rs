//! Feature catalogs for the FV and FVS decoding energy models.
//!
//! A catalog fixes the column space of the linear energy model: which bit
//! stream features are counted, at which level, and in which order. Block
//! based features are counted per block area and expand into thirteen
//! columns, one per pel-count bin from 4 to 16384 pels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of block-area bins for a blockpel-level feature.
pub const BLOCKPEL_BINS: usize = 13;

/// Largest block dimension in pels.
pub const MAX_BLOCK_DIM: u32 = 128;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CatalogError {
    #[error("invalid block dimension {0}: must be a power of two between 1 and {MAX_BLOCK_DIM}")]
    InvalidBlockDim(u32),
    #[error("feature vector has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown model kind '{0}' (expected fv or fvs)")]
    UnknownModel(String),
}

/// Which of the two models a catalog describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// The full model with one column group per coding tool.
    Fv,
    /// The reduced model that merges related tool features.
    Fvs,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fv => "fv",
            ModelKind::Fvs => "fvs",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fv" => Ok(ModelKind::Fv),
            "fvs" => Ok(ModelKind::Fvs),
            _ => Err(CatalogError::UnknownModel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingLevel {
    /// Constant per bit stream (the table lists no level).
    Scalar,
    Slice,
    Pel,
    /// Pel level with logarithmic accumulation of coefficient values.
    PelLog,
    Ctb,
    Boundary,
    Blockpel,
}

impl CountingLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            CountingLevel::Scalar => "scalar",
            CountingLevel::Slice => "slice",
            CountingLevel::Pel => "pel",
            CountingLevel::PelLog => "pel_log",
            CountingLevel::Ctb => "ctb",
            CountingLevel::Boundary => "boundary",
            CountingLevel::Blockpel => "blockpel",
        }
    }

    /// Number of model columns a feature at this level occupies.
    pub fn width(self) -> usize {
        match self {
            CountingLevel::Blockpel => BLOCKPEL_BINS,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    General,
    Intra,
    Inter,
    Transform,
    InLoopFilter,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::General => "general",
            Category::Intra => "intra",
            Category::Inter => "inter",
            Category::Transform => "transform",
            Category::InLoopFilter => "in_loop_filter",
        }
    }
}

/// Width and height of a coded block in pels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockShape {
    width: u32,
    height: u32,
}

impl BlockShape {
    pub fn new(width: u32, height: u32) -> Result<Self, CatalogError> {
        for dim in [width, height] {
            if !(dim.is_power_of_two() && dim <= MAX_BLOCK_DIM) {
                return Err(CatalogError::InvalidBlockDim(dim));
            }
        }
        Ok(BlockShape { width, height })
    }

    pub fn width(self) -> u32 {
        self.width
    }

    pub fn height(self) -> u32 {
        self.height
    }

    pub fn pels(self) -> u32 {
        self.width * self.height
    }

    /// All 64 shapes of the 8x8 width/height grid, row-major by height.
    pub fn all() -> impl Iterator<Item = BlockShape> {
        (0..8).flat_map(|h| {
            (0..8).map(move |w| BlockShape {
                width: 1 << w,
                height: 1 << h,
            })
        })
    }
}

/// Pel count held by blockpel bin `index` (4, 8, ..., 16384).
pub fn bin_pels(index: usize) -> u32 {
    4 << index
}

/// Blockpel bin for a block shape. Blocks smaller than four pels share bin 0.
pub fn blockpel_bin(shape: BlockShape) -> usize {
    // pels is a power of two in [1, 16384]
    let log2 = shape.pels().trailing_zeros() as usize;
    log2.saturating_sub(2)
}

/// [`blockpel_bin`] for raw dimensions.
pub fn blockpel_bin_dims(width: u32, height: u32) -> Result<usize, CatalogError> {
    BlockShape::new(width, height).map(blockpel_bin)
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSpec {
    /// Canonical snake-case feature name (without bin suffix).
    pub name: &'static str,
    pub level: CountingLevel,
    pub category: Category,
    /// Half-open range of this feature's columns in its own catalog.
    pub columns: std::ops::Range<usize>,
    /// Inclusive 1-based index range in the FV column space, for features
    /// that exist in the FV model.
    pub fv_index_range: Option<(usize, usize)>,
}

impl FeatureSpec {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Canonical column name for column `offset` within this feature.
    pub fn column_name(&self, offset: usize) -> String {
        match self.level {
            CountingLevel::Blockpel => format!("{}_{}", self.name, bin_pels(offset)),
            _ => self.name.to_string(),
        }
    }
}

/// A single model column, as listed by `catalog dump`.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub index: usize,
    pub name: String,
    pub feature: usize,
    pub level: CountingLevel,
    pub category: Category,
    /// Pel count of the blockpel bin, for blockpel columns.
    pub pel_bin: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    kind: ModelKind,
    specs: Vec<FeatureSpec>,
    columns: Vec<Column>,
}

use Category::*;
use CountingLevel::*;

type Row = (&'static str, CountingLevel, Category);

const FV_ROWS: &[Row] = &[
    ("eo", Scalar, General),
    ("i_slice", Slice, General),
    ("p_slice", Slice, General),
    ("b_slice", Slice, General),
    ("intra_blocks", Blockpel, Intra),
    ("isp", Blockpel, Intra),
    ("intra_pdpc", Blockpel, Intra),
    ("mip", Blockpel, Intra),
    ("ibc", Blockpel, Intra),
    ("inter_inter", Blockpel, Inter),
    ("inter_merge", Blockpel, Inter),
    ("inter_skip", Blockpel, Inter),
    ("affine", Blockpel, Inter),
    ("triangle_split", Blockpel, Inter),
    ("dmvr", Blockpel, Inter),
    ("bdof", Blockpel, Inter),
    ("uni", Pel, Inter),
    ("bi", Pel, Inter),
    ("frac_pel_hor", Pel, Inter),
    ("frac_pel_ver", Pel, Inter),
    ("frac_pel_both", Pel, Inter),
    ("copy_pel", Pel, Inter),
    ("transform", Blockpel, Transform),
    ("transform_skip", Blockpel, Transform),
    ("transform_no_cbf", Blockpel, Transform),
    ("lfnst", Blockpel, Transform),
    ("coeff", Pel, Transform),
    ("coeff_g1", Pel, Transform),
    ("val", PelLog, Transform),
    ("bs0", Boundary, InLoopFilter),
    ("bs1", Boundary, InLoopFilter),
    ("bs2", Boundary, InLoopFilter),
    ("sao_luma_bo", Ctb, InLoopFilter),
    ("sao_luma_eo", Ctb, InLoopFilter),
    ("sao_chroma_bo", Ctb, InLoopFilter),
    ("sao_chroma_eo", Ctb, InLoopFilter),
    ("alf_luma", Ctb, InLoopFilter),
    ("alf_chroma", Ctb, InLoopFilter),
];

/// FVS rows with the FV features each one sums.
const FVS_ROWS: &[(Row, &[&str])] = &[
    (("eo", Scalar, General), &["eo"]),
    (("i_slice", Slice, General), &["i_slice"]),
    (("pb_slice", Slice, General), &["p_slice", "b_slice"]),
    (("intra_blocks", Blockpel, Intra), &["intra_blocks"]),
    (
        ("inter_cu", Blockpel, Inter),
        &["inter_inter", "inter_merge"],
    ),
    (("inter_skip", Blockpel, Inter), &["inter_skip"]),
    (("uni", Pel, Inter), &["uni"]),
    (("bi", Pel, Inter), &["bi"]),
    (("frac_pel_hor", Pel, Inter), &["frac_pel_hor"]),
    (("frac_pel_ver", Pel, Inter), &["frac_pel_ver"]),
    (("frac_pel_both", Pel, Inter), &["frac_pel_both"]),
    (("copy_pel", Pel, Inter), &["copy_pel"]),
    (("transform", Blockpel, Transform), &["transform"]),
    (("coeff", Pel, Transform), &["coeff"]),
    (("val", PelLog, Transform), &["val"]),
    (("bs", Boundary, InLoopFilter), &["bs0", "bs1", "bs2"]),
    (
        ("sao", Ctb, InLoopFilter),
        &[
            "sao_luma_bo",
            "sao_luma_eo",
            "sao_chroma_bo",
            "sao_chroma_eo",
        ],
    ),
    (("alf", Ctb, InLoopFilter), &["alf_luma", "alf_chroma"]),
];

impl FeatureCatalog {
    pub fn build(kind: ModelKind) -> FeatureCatalog {
        let fv_ranges = fv_index_ranges();
        let rows: Vec<Row> = match kind {
            ModelKind::Fv => FV_ROWS.to_vec(),
            ModelKind::Fvs => FVS_ROWS.iter().map(|(row, _)| *row).collect(),
        };

        let mut specs = Vec::with_capacity(rows.len());
        let mut columns = Vec::new();
        for (name, level, category) in rows {
            let start = columns.len();
            let spec = FeatureSpec {
                name,
                level,
                category,
                columns: start..start + level.width(),
                fv_index_range: fv_ranges.iter().find(|(n, _)| *n == name).map(|(_, r)| *r),
            };
            for offset in 0..spec.width() {
                columns.push(Column {
                    index: start + offset,
                    name: spec.column_name(offset),
                    feature: specs.len(),
                    level,
                    category,
                    pel_bin: (level == Blockpel).then(|| bin_pels(offset)),
                });
            }
            specs.push(spec);
        }
        FeatureCatalog {
            kind,
            specs,
            columns,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn spec(&self, name: &str) -> Option<&FeatureSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn column_index(&self, column_name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == column_name)
    }

    /// CSV listing of every column: index, name, level, category, pel bin.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("column_index,canonical_name,level,category,pel_bin\n");
        for c in &self.columns {
            let bin = c.pel_bin.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.index,
                c.name,
                c.level.as_str(),
                c.category.as_str(),
                bin
            ));
        }
        out
    }
}

fn fv_index_ranges() -> Vec<(&'static str, (usize, usize))> {
    let mut next = 1;
    FV_ROWS
        .iter()
        .map(|&(name, level, _)| {
            let range = (next, next + level.width() - 1);
            next += level.width();
            (name, range)
        })
        .collect()
}

/// Column-wise aggregation from the FV column space onto the FVS one.
///
/// Entry `i` lists the FV columns summed into FVS column `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FvsAggregation {
    sources: Vec<Vec<usize>>,
    fv_len: usize,
}

impl FvsAggregation {
    pub fn new() -> Self {
        let fv = FeatureCatalog::build(ModelKind::Fv);
        let fvs = FeatureCatalog::build(ModelKind::Fvs);
        let mut sources = Vec::with_capacity(fvs.column_count());
        for ((row, parts), spec) in FVS_ROWS.iter().zip(fvs.specs()) {
            debug_assert_eq!(row.0, spec.name);
            for offset in 0..spec.width() {
                let cols = parts
                    .iter()
                    .map(|p| {
                        let src = fv.spec(p).expect("aggregation source missing from FV");
                        debug_assert_eq!(src.width(), spec.width());
                        src.columns.start + offset
                    })
                    .collect();
                sources.push(cols);
            }
        }
        FvsAggregation {
            sources,
            fv_len: fv.column_count(),
        }
    }

    pub fn sources(&self) -> &[Vec<usize>] {
        &self.sources
    }

    pub fn apply(&self, fv_counts: &[f64]) -> Result<Vec<f64>, CatalogError> {
        if fv_counts.len() != self.fv_len {
            return Err(CatalogError::LengthMismatch {
                expected: self.fv_len,
                got: fv_counts.len(),
            });
        }
        Ok(self
            .sources
            .iter()
            .map(|cols| cols.iter().map(|&c| fv_counts[c]).sum())
            .collect())
    }
}

impl Default for FvsAggregation {
    fn default() -> Self {
        Self::new()
    }
}

/// Maps an FV feature vector to the corresponding FVS vector.
pub fn aggregate_fv_to_fvs(fv_counts: &[f64]) -> Result<Vec<f64>, CatalogError> {
    FvsAggregation::new().apply(fv_counts)
}

//! Synthetic datasets with known coefficients.
//!
//! Records mimic a CTC corpus (sequences x QPs x configurations) plus the
//! tool-off augmentation, with feature counts drawn so that the linear
//! structure is exactly known: noiseless energies are `E = e_true . n`.
//!
//! Counts are generated in the FV column space and aggregated for FVS.
//! Block features split an area budget over the thirteen pel bins with
//! log-normal shares plus a small integer floor, so every column stays
//! populated. All-intra records carry no inter features, and a tool-off
//! record has zero counts in that tool's columns (its blocks move to a
//! sibling mode where one exists).

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{FeatureCatalog, FvsAggregation, ModelKind, BLOCKPEL_BINS};
use crate::dataset::{BitstreamRecord, Dataset, DatasetError, Setup, Tool};
use crate::estimator::EnergyModel;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// `E * (1 + N(0, sigma_rel))`
    Multiplicative {
        sigma_rel: f64,
    },
    /// `E + N(0, sigma_abs)`
    Additive {
        sigma_abs: f64,
    },
}

impl FromStr for NoiseModel {
    type Err = String;

    /// `none`, `mult:<sigma_rel>` or `add:<sigma_abs>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| format!("bad noise level '{v}': {e}"))
        };
        match s.split_once(':') {
            None if s == "none" => Ok(NoiseModel::None),
            Some(("mult", v)) => Ok(NoiseModel::Multiplicative {
                sigma_rel: parse(v)?,
            }),
            Some(("add", v)) => Ok(NoiseModel::Additive {
                sigma_abs: parse(v)?,
            }),
            _ => Err(format!(
                "unknown noise model '{s}' (expected none, mult:<s> or add:<s>)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOffPlan {
    pub tool: Tool,
    pub config: String,
    pub count: usize,
}

/// Tool-off streams per tool: six random-access tools with 92 streams each
/// and two all-intra tools with 104 each (760 in total).
pub fn default_tool_off_plan() -> Vec<ToolOffPlan> {
    use Tool::*;
    [
        (Alf, "RA", 92),
        (Bdof, "RA", 92),
        (Dmvr, "RA", 92),
        (Isp, "AI", 104),
        (Lfnst, "RA", 92),
        (Mip, "AI", 104),
        (Mts, "RA", 92),
        (Tpm, "RA", 92),
    ]
    .into_iter()
    .map(|(tool, config, count)| ToolOffPlan {
        tool,
        config: config.to_string(),
        count,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub catalog_kind: ModelKind,
    pub n_sequences: usize,
    pub qps: Vec<i32>,
    /// Encoder configurations of the CTC part (one record per sequence,
    /// QP and configuration).
    pub configs: Vec<String>,
    pub seed: u64,
    /// Ground-truth coefficients; drawn from the data when absent.
    pub e_true: Option<Vec<f64>>,
    pub noise: NoiseModel,
    pub tool_off_plan: Vec<ToolOffPlan>,
}

impl Default for SynthConfig {
    /// 23 sequences x 4 QPs x {RA, LD, AI} = 276 CTC records plus the
    /// default tool-off plan.
    fn default() -> Self {
        SynthConfig {
            catalog_kind: ModelKind::Fv,
            n_sequences: 23,
            qps: vec![22, 27, 32, 37],
            configs: ["RA", "LD", "AI"].map(String::from).to_vec(),
            seed: 0,
            e_true: None,
            noise: NoiseModel::None,
            tool_off_plan: default_tool_off_plan(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_sequences == 0 {
            return bad("n_sequences must be positive".into());
        }
        if self.qps.is_empty() {
            return bad("qps must not be empty".into());
        }
        match self.noise {
            NoiseModel::Multiplicative { sigma_rel: s } | NoiseModel::Additive { sigma_abs: s }
                if !(s.is_finite() && s >= 0.0) =>
            {
                return bad(format!("noise level must be nonnegative, got {s}"));
            }
            _ => {}
        }
        if let Some(e) = &self.e_true {
            let n = FeatureCatalog::build(self.catalog_kind).column_count();
            if e.len() != n {
                return bad(format!("e_true has {} entries, catalog has {n}", e.len()));
            }
            if e.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("e_true must be finite and nonnegative".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub e_true: Vec<f64>,
}

impl SynthOutput {
    /// Ground truth as a model, so it can be saved and evaluated like a fit.
    pub fn truth_model(&self) -> EnergyModel {
        EnergyModel::new(self.dataset.catalog_kind(), self.e_true.clone())
            .expect("e_true matches catalog")
    }
}

/// Draws a noisy energy from a clean one. Non-positive draws are redrawn.
pub fn perturb_energy<R: Rng + ?Sized>(clean: f64, noise: NoiseModel, rng: &mut R) -> f64 {
    let draw = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
    match noise {
        NoiseModel::None => clean,
        NoiseModel::Multiplicative { sigma_rel: 0.0 } => clean,
        NoiseModel::Additive { sigma_abs: 0.0 } => clean,
        NoiseModel::Multiplicative { sigma_rel } => loop {
            let v = clean * (1.0 + sigma_rel * draw(rng));
            if v > 0.0 {
                break v;
            }
        },
        NoiseModel::Additive { sigma_abs } => loop {
            let v = clean + sigma_abs * draw(rng);
            if v > 0.0 {
                break v;
            }
        },
    }
}

const RESOLUTIONS: [(u32, u32); 6] = [
    (416, 240),
    (832, 480),
    (1280, 720),
    (1920, 1080),
    (2560, 1600),
    (3840, 2160),
];

struct SequenceProfile {
    width: u32,
    height: u32,
    frames: u32,
    /// Residual richness; scales coefficient counts.
    texture: f64,
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    fv: &'a FeatureCatalog,
}

impl Generator<'_> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.uniform(lo.ln(), hi.ln()).exp()
    }

    fn set(&self, counts: &mut [f64], name: &str, value: f64) {
        let spec = self.fv.spec(name).expect("feature in FV catalog");
        counts[spec.columns.start] = value.round().max(0.0);
    }

    /// Spreads `area` pels over the 13 bins of a block feature.
    fn blocks(&mut self, counts: &mut [f64], name: &str, area: f64) {
        let start = self
            .fv
            .spec(name)
            .expect("feature in FV catalog")
            .columns
            .start;
        let shares: Vec<f64> = (0..BLOCKPEL_BINS)
            .map(|_| (0.5 * self.rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        let total: f64 = shares.iter().sum();
        for (k, share) in shares.iter().enumerate() {
            let pels = crate::catalog::bin_pels(k) as f64;
            let floor = self.rng.random_range(1..=12) as f64;
            counts[start + k] = (area * share / total / pels).round() + floor;
        }
    }

    fn record_counts(
        &mut self,
        seq: &SequenceProfile,
        qp: i32,
        config: &str,
        tool_off: Option<Tool>,
    ) -> Vec<f64> {
        let mut c = vec![0.0; self.fv.column_count()];
        let frames = seq.frames as f64;
        let pels = (seq.width * seq.height) as f64 * frames;
        // finer quantization -> more residual data
        let q = 2f64.powf((32 - qp) as f64 / 6.0);
        let all_intra = config.eq_ignore_ascii_case("AI");
        let low_delay = config.to_ascii_uppercase().starts_with("LD");

        self.set(&mut c, "eo", 1.0);
        let (i_slices, p_slices, b_slices) = if all_intra {
            (frames, 0.0, 0.0)
        } else if low_delay {
            (1.0, frames - 1.0, 0.0)
        } else {
            let i = 1.0 + (frames / 32.0).floor();
            (i, 0.0, frames - i)
        };
        self.set(&mut c, "i_slice", i_slices);
        self.set(&mut c, "p_slice", p_slices);
        self.set(&mut c, "b_slice", b_slices);

        let intra = if all_intra {
            1.0
        } else {
            self.log_uniform(0.03, 0.2)
        };
        let inter = 1.0 - intra;

        let intra_area = pels * intra;
        self.blocks(&mut c, "intra_blocks", intra_area);
        for (name, lo, hi) in [
            ("isp", 0.05, 0.25),
            ("intra_pdpc", 0.3, 0.7),
            ("mip", 0.1, 0.3),
            ("ibc", 0.005, 0.03),
        ] {
            let share = self.uniform(lo, hi);
            self.blocks(&mut c, name, intra_area * share);
        }

        if !all_intra {
            let inter_area = pels * inter;
            for (name, lo, hi) in [
                ("inter_inter", 0.2, 0.4),
                ("inter_merge", 0.2, 0.4),
                ("inter_skip", 0.2, 0.5),
                ("affine", 0.02, 0.08),
                ("triangle_split", 0.01, 0.05),
                ("dmvr", 0.1, 0.3),
                ("bdof", 0.1, 0.3),
            ] {
                let share = self.uniform(lo, hi);
                self.blocks(&mut c, name, inter_area * share);
            }
            for (name, lo, hi) in [
                ("uni", 0.3, 0.6),
                ("bi", 0.3, 0.6),
                ("frac_pel_hor", 0.1, 0.3),
                ("frac_pel_ver", 0.1, 0.3),
                ("frac_pel_both", 0.2, 0.5),
                ("copy_pel", 0.05, 0.2),
            ] {
                let share = self.uniform(lo, hi);
                self.set(&mut c, name, inter_area * share);
            }
        }

        let coded = (0.5 * q).min(0.95) * self.uniform(0.6, 1.0);
        self.blocks(&mut c, "transform", pels * coded);
        let skip = self.uniform(0.01, 0.05);
        self.blocks(&mut c, "transform_skip", pels * skip);
        let no_cbf = self.uniform(0.1, 0.4) / q.max(0.5);
        self.blocks(&mut c, "transform_no_cbf", pels * no_cbf);
        let lfnst = self.uniform(0.05, 0.2) * q.min(1.5);
        self.blocks(&mut c, "lfnst", pels * lfnst);

        let coeff = (pels * seq.texture * q * self.uniform(0.02, 0.06)).round();
        self.set(&mut c, "coeff", coeff);
        let g1 = self.uniform(0.2, 0.5);
        self.set(&mut c, "coeff_g1", coeff * g1);
        // log-accumulated values need not be integral
        let val_idx = self.fv.column_index("val").expect("val column");
        let mean_log = self.uniform(1.5, 3.0);
        c[val_idx] = (coeff * mean_log * 4.0).round() / 4.0;

        for name in ["bs0", "bs1", "bs2"] {
            let share = self.uniform(0.01, 0.05);
            self.set(&mut c, name, pels / 8.0 * share);
        }
        let ctbs = (seq.width.div_ceil(128) * seq.height.div_ceil(128)) as f64 * frames;
        for name in [
            "sao_luma_bo",
            "sao_luma_eo",
            "sao_chroma_bo",
            "sao_chroma_eo",
        ] {
            let share = self.uniform(0.05, 0.8);
            self.set(&mut c, name, ctbs * share);
        }
        for (name, lo, hi) in [("alf_luma", 0.3, 0.9), ("alf_chroma", 0.2, 0.7)] {
            let share = self.uniform(lo, hi);
            self.set(&mut c, name, ctbs * share);
        }

        if let Some(tool) = tool_off {
            self.switch_off(&mut c, tool);
        }
        c
    }

    fn switch_off(&self, c: &mut [f64], tool: Tool) {
        let (own, sibling): (&[&str], Option<&str>) = match tool {
            Tool::Alf => (&["alf_luma", "alf_chroma"], None),
            Tool::Bdof => (&["bdof"], Some("inter_inter")),
            Tool::Dmvr => (&["dmvr"], Some("inter_inter")),
            Tool::Isp => (&["isp"], Some("intra_pdpc")),
            Tool::Lfnst => (&["lfnst"], None),
            Tool::Mip => (&["mip"], Some("intra_pdpc")),
            // no dedicated column
            Tool::Mts => (&[], None),
            Tool::Tpm => (&["triangle_split"], Some("inter_merge")),
        };
        for name in own {
            let src = self.fv.spec(name).expect("tool feature").columns.clone();
            if let Some(sib) = sibling {
                let dst = self.fv.spec(sib).expect("sibling feature").columns.start;
                for (k, col) in src.clone().enumerate() {
                    c[dst + k] += c[col];
                }
            }
            for col in src {
                c[col] = 0.0;
            }
        }
    }
}

/// Builds a synthetic dataset and its ground-truth coefficients.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let fv = FeatureCatalog::build(ModelKind::Fv);
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        fv: &fv,
    };

    let sequences: Vec<SequenceProfile> = (0..config.n_sequences)
        .map(|_| {
            let (width, height) = RESOLUTIONS[g.rng.random_range(0..RESOLUTIONS.len())];
            SequenceProfile {
                width,
                height,
                frames: g.rng.random_range(16..=64),
                texture: g.log_uniform(0.5, 2.0),
            }
        })
        .collect();

    struct Meta {
        id: String,
        seq: usize,
        config: String,
        qp: i32,
        tool_off: Option<Tool>,
    }
    let mut metas = Vec::new();
    for (s, _) in sequences.iter().enumerate() {
        for &qp in &config.qps {
            for cfg in &config.configs {
                metas.push(Meta {
                    id: format!("ctc_seq{s:02}_{cfg}_qp{qp}"),
                    seq: s,
                    config: cfg.clone(),
                    qp,
                    tool_off: None,
                });
            }
        }
    }
    let nq = config.qps.len();
    for plan in &config.tool_off_plan {
        for i in 0..plan.count {
            let s = (i / nq) % config.n_sequences;
            let qp = config.qps[i % nq];
            metas.push(Meta {
                id: format!(
                    "{}_{i:03}_seq{s:02}_{}_qp{qp}",
                    plan.tool.acronym().to_lowercase(),
                    plan.config
                ),
                seq: s,
                config: plan.config.clone(),
                qp,
                tool_off: Some(plan.tool),
            });
        }
    }

    let aggregation = (config.catalog_kind == ModelKind::Fvs).then(FvsAggregation::new);
    let features: Vec<Vec<f64>> = metas
        .iter()
        .map(|m| {
            let fv_counts = g.record_counts(&sequences[m.seq], m.qp, &m.config, m.tool_off);
            match &aggregation {
                Some(agg) => agg.apply(&fv_counts).expect("FV-length vector"),
                None => fv_counts,
            }
        })
        .collect();

    let n_cols = FeatureCatalog::build(config.catalog_kind).column_count();
    let e_true = match &config.e_true {
        Some(e) => e.clone(),
        None => {
            // each feature contributes about the same energy on average
            let per_feature = 100.0 / n_cols as f64;
            (0..n_cols)
                .map(|j| {
                    let mean =
                        features.iter().map(|f| f[j]).sum::<f64>() / features.len().max(1) as f64;
                    let jitter = g.log_uniform(0.5, 2.0);
                    if mean > 0.0 {
                        per_feature * jitter / mean
                    } else {
                        per_feature * jitter
                    }
                })
                .collect()
        }
    };
    let truth = EnergyModel::new(config.catalog_kind, e_true.clone()).expect("length checked");

    let mut records = Vec::with_capacity(metas.len());
    for (m, f) in metas.into_iter().zip(features) {
        let clean = truth.predict(&f).expect("length checked");
        if clean.is_nan() || clean <= 0.0 {
            return Err(SynthError::Config(format!(
                "record {} has no positive energy under e_true",
                m.id
            )));
        }
        let energy = perturb_energy(clean, config.noise, &mut g.rng);
        let energy_stddev = match config.noise {
            NoiseModel::None => 0.0,
            NoiseModel::Multiplicative { sigma_rel } => clean * sigma_rel,
            NoiseModel::Additive { sigma_abs } => sigma_abs,
        };
        records.push(BitstreamRecord {
            id: m.id,
            sequence: format!("seq{:02}", m.seq),
            config: m.config,
            qp: m.qp,
            tool_off: m.tool_off,
            energy_joules: energy,
            energy_stddev,
            sample_count: 5,
            features: f,
        });
    }

    let dataset = Dataset::new(config.catalog_kind, Setup::Synthetic, records)?;
    Ok(SynthOutput { dataset, e_true })
}

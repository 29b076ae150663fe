mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use decenergy::dataset::{load_dataset, merge_datasets, METADATA_COLUMNS};
use decenergy::estimator::fit_dataset;
use decenergy::evaluation::{cross_validate_stratified, evaluate_model, scatter_export, Stratify};
use decenergy::measurement::{
    run_session, CommandWorkload, RaplCounter, ScriptedCounter, SessionConfig,
};
use decenergy::synth::{generate, NoiseModel, SynthConfig};
use decenergy::{
    write_atomic, EnergyModel, EvaluationReport, FeatureCatalog, FitConfig, ModelKind,
};

use crate::config::RunConfig;

/// Overrides the RAPL zone directory used by `measure --source rapl`.
const RAPL_PATH_ENV: &str = "DECENERGY_RAPL_PATH";

#[derive(Debug, Parser)]
#[command(name = "decenergy", version, about = "Decoder energy modeling toolkit")]
struct Cli {
    /// TOML file with default parameters (flags take precedence).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Feature catalog export.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Dataset validation and merging.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Generate a synthetic dataset with known coefficients.
    Synth {
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long, default_value_t = 23)]
        sequences: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [22, 27, 32, 37])]
        qps: Vec<i32>,
        /// Encoder configurations of the CTC part.
        #[arg(long, value_delimiter = ',', default_values_t = ["RA".to_string(), "LD".to_string(), "AI".to_string()])]
        configs: Vec<String>,
        /// none, mult:<sigma_rel> or add:<sigma_abs>
        #[arg(long, default_value = "none")]
        noise: NoiseModel,
        /// Skip the tool-off streams.
        #[arg(long)]
        no_tool_off: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
        /// Where to write the ground-truth coefficients (model JSON).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit energy coefficients to a dataset.
    Fit {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(short, long, default_value = "model.json")]
        output: PathBuf,
        /// Drop the nonnegativity bound on coefficients.
        #[arg(long)]
        allow_negative: bool,
    },
    /// k-fold cross-validation.
    Cv {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long, default_value = "report.json")]
        output: PathBuf,
        /// Also write (E, E_hat) pairs and the identity line.
        #[arg(long)]
        scatter: Option<PathBuf>,
        /// Keep each group of records (sequence, qp, config, tool_off) spread over the folds.
        #[arg(long)]
        stratify: Option<Stratify>,
        #[arg(long)]
        allow_negative: bool,
    },
    /// Evaluate a fitted model on a dataset without refitting.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(short, long, default_value = "report.json")]
        output: PathBuf,
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Measure the decoding energy of a command.
    Measure {
        /// Decoder invocation, run through `sh -c`.
        #[arg(long)]
        cmd: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        m_min: Option<usize>,
        #[arg(long)]
        m_max: Option<usize>,
        /// rapl or mock:<readings file>
        #[arg(long)]
        source: Option<String>,
        #[arg(short, long, default_value = "session.json")]
        output: PathBuf,
    },
    /// Export scatter data from an evaluation report.
    Scatter {
        #[arg(long)]
        report: PathBuf,
        #[arg(short, long, default_value = "scatter.csv")]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CatalogAction {
    /// Column table as CSV.
    Dump {
        #[arg(long)]
        model: Option<ModelKind>,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Markdown description of the dataset CSV layout.
    SchemaDoc {
        #[arg(short, long, default_value = "docs/dataset-schema.md")]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetAction {
    /// Check a dataset CSV against a catalog.
    Validate {
        path: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Concatenate two datasets into a Merge setup.
    Merge {
        a: PathBuf,
        b: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
    },
}

/// Missing parameter that neither a flag nor the config file supplied.
#[derive(Debug)]
struct Missing(&'static str);

fn require<T>(flag: Option<T>, config: Option<T>, name: &'static str) -> Result<T> {
    flag.or(config).ok_or_else(|| anyhow!(Missing(name)))
}

impl std::fmt::Display for Missing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing --{} (pass it or set it in --config)", self.0)
    }
}

impl std::error::Error for Missing {}

fn fit_config(allow_negative: bool) -> FitConfig {
    if allow_negative {
        FitConfig::default().allow_negative()
    } else {
        FitConfig::default()
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };

    match cli.command {
        Command::Catalog {
            action: CatalogAction::Dump { model, output },
        } => {
            let kind = require(model, cfg.model, "model")?;
            let csv = FeatureCatalog::build(kind).dump_csv();
            match output {
                Some(path) => write_atomic(&path, csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Catalog {
            action: CatalogAction::SchemaDoc { output },
        } => {
            write_atomic(&output, schema_doc())
                .with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Dataset {
            action: DatasetAction::Validate { path, model },
        } => {
            let kind = require(model, cfg.model, "model")?;
            let d = load_dataset(&path, kind)
                .with_context(|| format!("validating {}", path.display()))?;
            eprintln!(
                "{}: {} records, {} columns, setup {}",
                path.display(),
                d.len(),
                FeatureCatalog::build(kind).column_count(),
                d.setup()
            );
        }
        Command::Dataset {
            action:
                DatasetAction::Merge {
                    a,
                    b,
                    output,
                    model,
                },
        } => {
            let kind = require(model, cfg.model, "model")?;
            let da = load_dataset(&a, kind).with_context(|| format!("loading {}", a.display()))?;
            let db = load_dataset(&b, kind).with_context(|| format!("loading {}", b.display()))?;
            let merged = merge_datasets(&da, &db)?;
            merged
                .save(&output)
                .with_context(|| format!("writing {}", output.display()))?;
            eprintln!(
                "merged {} + {} records into {}",
                da.len(),
                db.len(),
                output.display()
            );
        }
        Command::Synth {
            model,
            sequences,
            qps,
            configs,
            noise,
            no_tool_off,
            seed,
            output,
            truth,
        } => {
            let mut sc = SynthConfig {
                catalog_kind: require(model, cfg.model, "model")?,
                n_sequences: sequences,
                qps,
                configs,
                seed: seed.or(cfg.seed).unwrap_or(0),
                noise,
                ..SynthConfig::default()
            };
            if no_tool_off {
                sc.tool_off_plan.clear();
            }
            let out = generate(&sc)?;
            out.dataset
                .save(&output)
                .with_context(|| format!("writing {}", output.display()))?;
            if let Some(path) = truth {
                out.truth_model()
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            eprintln!(
                "wrote {} records to {}",
                out.dataset.len(),
                output.display()
            );
        }
        Command::Fit {
            data,
            model,
            output,
            allow_negative,
        } => {
            let kind = require(model, cfg.model, "model")?;
            let data = require(data, cfg.data, "data")?;
            let d =
                load_dataset(&data, kind).with_context(|| format!("loading {}", data.display()))?;
            let fitted = fit_dataset(
                &d,
                &fit_config(allow_negative || cfg.allow_negative.unwrap_or(false)),
            )?;
            fitted
                .save(&output)
                .with_context(|| format!("writing {}", output.display()))?;
            if let Some(meta) = fitted.metadata() {
                eprintln!(
                    "fitted {} coefficients: residual {:.6e}, {} at bounds, {} unsupported",
                    fitted.coefficients().len(),
                    meta.residual_norm,
                    meta.active_bounds,
                    meta.zero_support.len()
                );
            }
        }
        Command::Cv {
            data,
            model,
            k,
            seed,
            output,
            scatter,
            stratify,
            allow_negative,
        } => {
            let kind = require(model, cfg.model, "model")?;
            let data = require(data, cfg.data, "data")?;
            let d =
                load_dataset(&data, kind).with_context(|| format!("loading {}", data.display()))?;
            let k = k.or(cfg.k).unwrap_or(10);
            let seed = seed.or(cfg.seed).unwrap_or(0);
            let fc = fit_config(allow_negative || cfg.allow_negative.unwrap_or(false));
            let report = cross_validate_stratified(&d, k, seed, stratify.or(cfg.stratify), &fc)?;
            write_report(&report, &output, scatter.as_deref())?;
            eprintln!("{k}-fold epsilon_bar = {:.6e}", report.epsilon_bar);
        }
        Command::Eval {
            data,
            coeffs,
            output,
            scatter,
        } => {
            let coeffs = require(coeffs, cfg.coeffs, "coeffs")?;
            let data = require(data, cfg.data, "data")?;
            let model = EnergyModel::load(&coeffs)
                .with_context(|| format!("loading {}", coeffs.display()))?;
            let d = load_dataset(&data, model.catalog_kind())
                .with_context(|| format!("loading {}", data.display()))?;
            let report = evaluate_model(&d, &model)?;
            write_report(&report, &output, scatter.as_deref())?;
            eprintln!("epsilon_bar = {:.6e}", report.epsilon_bar);
        }
        Command::Measure {
            cmd,
            alpha,
            beta,
            m_min,
            m_max,
            source,
            output,
        } => {
            let m = cfg.measure;
            let defaults = SessionConfig::default();
            let session = SessionConfig {
                alpha: alpha.or(m.alpha).unwrap_or(defaults.alpha),
                beta: beta.or(m.beta).unwrap_or(defaults.beta),
                m_min: m_min.or(m.m_min).unwrap_or(defaults.m_min),
                m_max: m_max.or(m.m_max).unwrap_or(defaults.m_max),
            };
            session.validate()?;
            let mut workload = CommandWorkload::new(require(cmd, m.cmd, "cmd")?);
            let source = source.or(m.source).unwrap_or_else(|| "rapl".to_string());
            let outcome = if source == "rapl" {
                let zone = std::env::var_os(RAPL_PATH_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(RaplCounter::DEFAULT_ZONE));
                let mut counter = RaplCounter::open(&zone)?;
                run_session(&mut workload, &mut counter, session)?
            } else if let Some(path) = source.strip_prefix("mock:") {
                let mut counter = ScriptedCounter::load(path)?;
                run_session(&mut workload, &mut counter, session)?
            } else {
                return Err(anyhow!(
                    "unknown source '{source}' (expected rapl or mock:<path>)"
                ));
            };
            write_atomic(&output, outcome.to_json())
                .with_context(|| format!("writing {}", output.display()))?;
            eprintln!(
                "mean {:.6} J over {} samples ({})",
                outcome.mean_energy_joules,
                outcome.session.len(),
                if outcome.converged {
                    "converged"
                } else {
                    "not converged"
                }
            );
        }
        Command::Scatter { report, output } => {
            let text = std::fs::read_to_string(&report)
                .with_context(|| format!("reading {}", report.display()))?;
            let parsed = EvaluationReport::from_json(&text)
                .with_context(|| format!("parsing {}", report.display()))?;
            scatter_export(&parsed, &output)?;
        }
    }
    Ok(())
}

fn write_report(report: &EvaluationReport, output: &Path, scatter: Option<&Path>) -> Result<()> {
    write_atomic(output, report.to_json())
        .with_context(|| format!("writing {}", output.display()))?;
    if let Some(path) = scatter {
        scatter_export(report, path)?;
    }
    Ok(())
}

fn schema_doc() -> String {
    let mut s = String::from("# Dataset CSV schema\n\n");
    s.push_str("One row per bit stream. Metadata columns come first, in this order:\n\n");
    s.push_str("| column | type | meaning |\n|---|---|---|\n");
    let meaning = [
        ("string", "unique record identifier"),
        ("string", "source sequence name"),
        ("string", "encoder configuration label (RA, LD, AI, ...)"),
        ("integer", "quantization parameter"),
        ("string", "disabled tool acronym, empty for CTC streams"),
        ("real > 0", "mean decoding energy in joules"),
        ("real >= 0", "sample standard deviation of the energy"),
        ("integer >= 1", "number of measurement samples"),
    ];
    for (name, (ty, what)) in METADATA_COLUMNS.iter().zip(meaning) {
        s.push_str(&format!("| `{name}` | {ty} | {what} |\n"));
    }
    s.push_str("\nFeature columns follow in catalog order. Counts are nonnegative and integral, except `pel_log`-level columns.\n");
    for kind in [ModelKind::Fv, ModelKind::Fvs] {
        let cat = FeatureCatalog::build(kind);
        s.push_str(&format!(
            "\n## {} ({} feature columns)\n\n",
            kind.as_str().to_uppercase(),
            cat.column_count()
        ));
        s.push_str("| feature | level | category | columns |\n|---|---|---|---|\n");
        for spec in cat.specs() {
            let cols = if spec.columns.len() == 1 {
                format!("`{}`", spec.column_name(0))
            } else {
                format!(
                    "`{}` .. `{}`",
                    spec.column_name(0),
                    spec.column_name(spec.columns.len() - 1)
                )
            };
            s.push_str(&format!(
                "| {} | {} | {} | {cols} |\n",
                spec.name,
                spec.level.as_str(),
                spec.category.as_str()
            ));
        }
    }
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<Missing>() => {
            Cli::command()
                .error(clap::error::ErrorKind::MissingRequiredArgument, err)
                .exit();
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

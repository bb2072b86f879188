//! Experiment orchestration: full runs over (method, prompt seed) cells,
//! the λ Pareto sweep, and the post-hoc temperature-scaling baseline.

use std::path::{Path, PathBuf};

use otpt_core::calibration::{
    apply_temperature, default_temperature_grid, fit_temperature, CalibrationReport, LogitRecord,
};
use otpt_core::error::{LabError, Result};
use otpt_core::model::{encode_image, encode_text, raw_logits, PromptState};
use otpt_core::objective::Method;
use otpt_core::synthdata::{generate_validation_samples, load_dataset, Dataset};
use otpt_core::tuner::{run_dataset, PredictionRecord, TunerConfig};

use crate::csvio::{self, ParetoRow, RecordRow, ResultRow};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub methods: Vec<Method>,
    /// Template tuner settings; `method` is overridden per cell.
    pub tuner: TunerConfig,
    pub m_bins: usize,
    pub out_dir: PathBuf,
    pub prompt_seeds: Vec<u64>,
    pub parallel: Option<usize>,
    pub posthoc_ts: bool,
    pub val_fraction: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(LabError::InvalidSpec("methods must be non-empty".into()));
        }
        if self.prompt_seeds.is_empty() {
            return Err(LabError::InvalidSpec("prompt_seeds must be non-empty".into()));
        }
        if self.m_bins < 1 {
            return Err(LabError::InvalidSpec("m_bins must be >= 1".into()));
        }
        if self.posthoc_ts && !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return Err(LabError::InvalidSpec("val_fraction must lie in (0, 1]".into()));
        }
        if let Some(p) = self.parallel {
            if p < 1 {
                return Err(LabError::InvalidSpec("--parallel must be >= 1".into()));
            }
        }
        self.tuner.validate()
    }
}

/// One (method, prompt seed) run with everything needed to write the output
/// files.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub row: ResultRow,
    pub method_tag: String,
    pub seed: u64,
    pub records: Vec<PredictionRecord>,
    pub report: CalibrationReport,
}

/// Effective worker count: the `--parallel` request (or all cores), capped
/// by the `OTPT_LAB_THREADS` environment variable.
pub fn effective_threads(requested: Option<usize>) -> usize {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let n = requested.unwrap_or(cores);
    let capped = match std::env::var("OTPT_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
    {
        Some(cap) => n.min(cap),
        None => n,
    };
    capped.max(1)
}

fn in_pool<T: Send>(parallel: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_threads(parallel))
        .build()
        .map_err(|e| LabError::InvalidSpec(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn mean_cos(records: &[PredictionRecord]) -> f64 {
    records.iter().map(|r| r.mean_pairwise_cos).sum::<f64>() / records.len() as f64
}

/// λ actually applied by a method (zero for methods without the penalty),
/// mirroring the loss-breakdown convention.
fn applied_lambda(method: Method, lambda_ortho: f64) -> f64 {
    match method {
        Method::Otpt | Method::OtptHh | Method::OtptCtpt => lambda_ortho,
        _ => 0.0,
    }
}

fn run_cell(
    ds: &Dataset,
    prompt: &PromptState,
    seed: u64,
    method: Method,
    cfg: &ExperimentConfig,
    echo: &str,
) -> Result<CellOutput> {
    let tuner = TunerConfig { method, ..cfg.tuner };
    let records = run_dataset(&ds.encoder, &ds.classes, prompt, &ds.samples, &tuner)?;
    let report = CalibrationReport::compute(&records, cfg.m_bins, method.as_str(), echo)?;
    Ok(CellOutput {
        row: ResultRow {
            method: method.as_str().to_string(),
            lambda_ortho: applied_lambda(method, cfg.tuner.lambda_ortho),
            seed,
            accuracy: report.accuracy,
            ece: report.ece,
            sce: report.sce,
            mean_pairwise_cos: mean_cos(&records),
        },
        method_tag: method.as_str().to_string(),
        seed,
        records,
        report,
    })
}

fn posthoc_ts_cell(
    ds: &Dataset,
    prompt: &PromptState,
    seed: u64,
    cfg: &ExperimentConfig,
    echo: &str,
) -> Result<CellOutput> {
    let val_n = ((cfg.val_fraction * ds.spec.n_test as f64).ceil() as usize).max(1);
    let val = generate_validation_samples(ds, val_n, seed)?;
    let e = encode_text(&ds.encoder, &ds.classes, prompt)?;
    let cos = e.mean_pairwise_cos();
    let logits_of = |samples: &[otpt_core::synthdata::Sample]| -> Result<Vec<LogitRecord>> {
        samples
            .iter()
            .map(|s| {
                let v = encode_image(&ds.encoder, &s.x)?;
                Ok(LogitRecord {
                    logits: raw_logits(&e, &v, ds.encoder.logit_scale),
                    true_label: s.label,
                    mean_pairwise_cos: cos,
                })
            })
            .collect()
    };
    let tau = fit_temperature(&logits_of(&val)?, &default_temperature_grid())?;
    let records = apply_temperature(&logits_of(&ds.samples)?, tau);
    let tag = "zeroshot+ts";
    let report = CalibrationReport::compute(&records, cfg.m_bins, tag, echo)?;
    Ok(CellOutput {
        row: ResultRow {
            method: tag.to_string(),
            lambda_ortho: 0.0,
            seed,
            accuracy: report.accuracy,
            ece: report.ece,
            sce: report.sce,
            mean_pairwise_cos: mean_cos(&records),
        },
        method_tag: tag.to_string(),
        seed,
        records,
        report,
    })
}

fn config_echo(cfg: &ExperimentConfig) -> String {
    format!(
        "lambda_ortho={} lambda_atfd={} rho={} n_views={} noise_sigma={} mask_fraction={} steps={} lr={} weight_decay={} seed={} m_bins={}",
        cfg.tuner.lambda_ortho,
        cfg.tuner.lambda_atfd,
        cfg.tuner.rho,
        cfg.tuner.n_views,
        cfg.tuner.noise_sigma,
        cfg.tuner.mask_fraction,
        cfg.tuner.steps,
        cfg.tuner.adamw.lr,
        cfg.tuner.adamw.weight_decay,
        cfg.tuner.seed,
        cfg.m_bins
    )
}

/// Runs every (prompt seed, method) cell plus the optional temperature
/// baseline, in deterministic order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<CellOutput>> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset_path)?;
    let echo = config_echo(cfg);
    in_pool(cfg.parallel, || {
        let mut cells = Vec::new();
        for &seed in &cfg.prompt_seeds {
            let prompt = PromptState::from_hard_seed(seed, ds.spec.n_ctx, ds.spec.d_tok);
            for &method in &cfg.methods {
                cells.push(run_cell(&ds, &prompt, seed, method, cfg, &echo)?);
            }
            if cfg.posthoc_ts {
                cells.push(posthoc_ts_cell(&ds, &prompt, seed, cfg, &echo)?);
            }
        }
        Ok(cells)
    })
}

fn record_rows(cells: &[CellOutput]) -> Vec<RecordRow> {
    let mut rows = Vec::new();
    for cell in cells {
        for (i, r) in cell.records.iter().enumerate() {
            rows.push(RecordRow {
                sample_index: i,
                method: cell.method_tag.clone(),
                seed: cell.seed,
                true_label: r.true_label,
                predicted: r.predicted,
                confidence: r.confidence,
                mean_pairwise_cos: r.mean_pairwise_cos,
                probs: r.probs.clone(),
            });
        }
    }
    rows
}

/// Writes results.csv, records.csv and one reliability CSV per cell.
pub fn write_experiment_outputs(cfg: &ExperimentConfig, cells: &[CellOutput]) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let rows: Vec<ResultRow> = cells.iter().map(|c| c.row.clone()).collect();
    std::fs::write(cfg.out_dir.join("results.csv"), csvio::results_csv(&rows))?;
    std::fs::write(
        cfg.out_dir.join("records.csv"),
        csvio::records_csv(&record_rows(cells))?,
    )?;
    for cell in cells {
        let name = format!("reliability_{}_{}.csv", cell.method_tag, cell.seed);
        std::fs::write(cfg.out_dir.join(name), csvio::reliability_csv(&cell.report.bins))?;
    }
    Ok(())
}

/// λ sweep of the orthogonality-penalized method at a single prompt seed.
pub fn run_sweep(
    dataset_path: &Path,
    lambdas: &[f64],
    prompt_seed: u64,
    tuner: &TunerConfig,
    m_bins: usize,
    parallel: Option<usize>,
) -> Result<Vec<ParetoRow>> {
    if lambdas.is_empty() {
        return Err(LabError::InvalidSpec("lambda list must be non-empty".into()));
    }
    if lambdas.iter().any(|l| *l < 0.0 || !l.is_finite()) {
        return Err(LabError::InvalidSpec("lambdas must be finite and >= 0".into()));
    }
    let ds = load_dataset(dataset_path)?;
    let prompt = PromptState::from_hard_seed(prompt_seed, ds.spec.n_ctx, ds.spec.d_tok);
    in_pool(parallel, || {
        lambdas
            .iter()
            .map(|&lambda| {
                let cfg = TunerConfig {
                    method: Method::Otpt,
                    lambda_ortho: lambda,
                    ..*tuner
                };
                let records =
                    run_dataset(&ds.encoder, &ds.classes, &prompt, &ds.samples, &cfg)?;
                let report = CalibrationReport::compute(&records, m_bins, "otpt", "")?;
                Ok(ParetoRow {
                    lambda,
                    accuracy: report.accuracy,
                    ece: report.ece,
                    mean_pairwise_cos: mean_cos(&records),
                })
            })
            .collect()
    })
}

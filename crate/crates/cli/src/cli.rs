//! Argument parsing and command dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use otpt_core::error::{LabError, Result};
use otpt_core::objective::Method;
use otpt_core::optim::AdamWConfig;
use otpt_core::synthdata::{generate_dataset, save_dataset, DatasetSpec};
use otpt_core::tuner::TunerConfig;

use crate::analyze;
use crate::csvio;
use crate::experiment::{run_experiment, run_sweep, write_experiment_outputs, ExperimentConfig};
use crate::svg;

#[derive(Parser, Debug)]
#[command(
    name = "otpt-lab",
    about = "Test-time prompt tuning calibration lab",
    long_about = "Runs prompt-tuning calibration experiments on a synthetic dual-encoder \
                  benchmark and emits deterministic CSV tables and SVG plots.\n\n\
                  Configuration precedence for `run`: command-line flags override values \
                  from --config; --config overrides built-in defaults.\n\n\
                  The OTPT_LAB_THREADS environment variable caps worker threads for all \
                  commands (default: machine cores). Outputs are byte-identical for any \
                  thread count."
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Run methods over a dataset; writes results.csv, records.csv and
    /// per-cell reliability CSVs.
    Run(RunArgs),
    /// Sweep the orthogonality weight; writes pareto.csv.
    Sweep(SweepArgs),
    /// Analyses over a records.csv file.
    Analyze(AnalyzeArgs),
    /// Render a CSV table as an SVG figure.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 24)]
    pub d_img: usize,
    #[arg(long, default_value_t = 16)]
    pub d_tok: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub feat_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub n_ctx: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub separation: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Optional JSON config file for `run`; every field mirrors a flag.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct RunFileConfig {
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub prompt_seeds: Option<Vec<u64>>,
    pub m_bins: Option<usize>,
    pub lambda_ortho: Option<f64>,
    pub lambda_atfd: Option<f64>,
    pub rho: Option<f64>,
    pub n_views: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub mask_fraction: Option<f64>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub posthoc_ts: Option<bool>,
    pub val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated subset of: zeroshot,tpt,ctpt,otpt,otpt_hh,otpt_ctpt.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated prompt seeds, one run per seed.
    #[arg(long)]
    pub prompt_seeds: Option<String>,
    #[arg(long)]
    pub m_bins: Option<usize>,
    #[arg(long)]
    pub lambda_ortho: Option<f64>,
    #[arg(long)]
    pub lambda_atfd: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n_views: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Base augmentation seed (per-sample seeds derive from it).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (capped by OTPT_LAB_THREADS).
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Also fit and report a zeroshot+ts temperature-scaling baseline.
    #[arg(long)]
    pub posthoc_ts: bool,
    /// Fraction of n_test used for the temperature validation split.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated orthogonality weights.
    #[arg(long, default_value = "0,2,6,18,54")]
    pub lambdas: String,
    #[arg(long, default_value_t = 0)]
    pub prompt_seed: u64,
    #[arg(long, default_value_t = 15)]
    pub m_bins: usize,
    #[arg(long, default_value_t = 50.0)]
    pub lambda_atfd: f64,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, default_value_t = 64)]
    pub n_views: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub mask_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Pdf,
    Trace,
    Groups,
    Corr,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub m_bins: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Reliability,
    Pdf,
    Pareto,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',')
        .map(|m| m.trim())
        .filter(|m| !m.is_empty())
        .map(|m| m.parse::<Method>())
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| LabError::InvalidSpec(format!("cannot parse `{v}` as integer")))
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| LabError::InvalidSpec(format!("cannot parse `{v}` as number")))
        })
        .collect()
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let spec = DatasetSpec {
        n_classes: args.classes,
        d_img: args.d_img,
        d_tok: args.d_tok,
        hidden: args.hidden,
        feat_dim: args.feat_dim,
        n_ctx: args.n_ctx,
        n_test: args.n_test,
        class_noise_sigma: args.noise,
        separation: args.separation,
        seed: args.seed,
    };
    let ds = generate_dataset(&spec)?;
    save_dataset(&ds, &args.out)
}

/// Effective run configuration: flags override file values, file values
/// override defaults.
pub fn resolve_run_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let file: RunFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| LabError::InvalidSpec(format!("config file: {e}")))?
        }
        None => RunFileConfig::default(),
    };

    let dataset_path = args
        .dataset
        .clone()
        .or(file.dataset)
        .ok_or_else(|| LabError::InvalidSpec("missing --dataset".into()))?;
    let out_dir = args
        .out_dir
        .clone()
        .or(file.out_dir)
        .ok_or_else(|| LabError::InvalidSpec("missing --out-dir".into()))?;

    let methods = match (&args.methods, &file.methods) {
        (Some(s), _) => parse_methods(s)?,
        (None, Some(list)) => list
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<_>>()?,
        (None, None) => vec![Method::Zeroshot, Method::Tpt, Method::Otpt],
    };
    let prompt_seeds = match (&args.prompt_seeds, &file.prompt_seeds) {
        (Some(s), _) => parse_u64_list(s)?,
        (None, Some(list)) => list.clone(),
        (None, None) => vec![0],
    };

    let defaults = TunerConfig::new(Method::Zeroshot);
    let adamw = AdamWConfig {
        lr: args.lr.or(file.lr).unwrap_or(defaults.adamw.lr),
        beta1: args.beta1.or(file.beta1).unwrap_or(defaults.adamw.beta1),
        beta2: args.beta2.or(file.beta2).unwrap_or(defaults.adamw.beta2),
        eps: args.eps.or(file.eps).unwrap_or(defaults.adamw.eps),
        weight_decay: args
            .weight_decay
            .or(file.weight_decay)
            .unwrap_or(defaults.adamw.weight_decay),
    };
    let tuner = TunerConfig {
        method: Method::Zeroshot, // set per cell
        lambda_ortho: args.lambda_ortho.or(file.lambda_ortho).unwrap_or(defaults.lambda_ortho),
        lambda_atfd: args.lambda_atfd.or(file.lambda_atfd).unwrap_or(defaults.lambda_atfd),
        rho: args.rho.or(file.rho).unwrap_or(defaults.rho),
        n_views: args.n_views.or(file.n_views).unwrap_or(defaults.n_views),
        noise_sigma: args.noise_sigma.or(file.noise_sigma).unwrap_or(defaults.noise_sigma),
        mask_fraction: args
            .mask_fraction
            .or(file.mask_fraction)
            .unwrap_or(defaults.mask_fraction),
        steps: args.steps.or(file.steps).unwrap_or(defaults.steps),
        adamw,
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };

    Ok(ExperimentConfig {
        dataset_path,
        methods,
        tuner,
        m_bins: args.m_bins.or(file.m_bins).unwrap_or(15),
        out_dir,
        prompt_seeds,
        parallel: args.parallel.or(file.parallel),
        posthoc_ts: args.posthoc_ts || file.posthoc_ts.unwrap_or(false),
        val_fraction: args.val_fraction.or(file.val_fraction).unwrap_or(0.2),
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run_config(args)?;
    let cells = run_experiment(&cfg)?;
    write_experiment_outputs(&cfg, &cells)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let lambdas = parse_f64_list(&args.lambdas)?;
    let tuner = TunerConfig {
        method: Method::Otpt,
        lambda_ortho: 0.0, // replaced per sweep point
        lambda_atfd: args.lambda_atfd,
        rho: args.rho,
        n_views: args.n_views,
        noise_sigma: args.noise_sigma,
        mask_fraction: args.mask_fraction,
        steps: args.steps,
        adamw: AdamWConfig {
            lr: args.lr,
            weight_decay: args.weight_decay,
            ..AdamWConfig::default()
        },
        seed: args.seed,
    };
    let rows = run_sweep(
        &args.dataset,
        &lambdas,
        args.prompt_seed,
        &tuner,
        args.m_bins,
        args.parallel,
    )?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, csvio::pareto_csv(&rows))?;
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let rows = csvio::read_records(&args.records)?;
    let out = match args.mode {
        AnalyzeMode::Pdf => analyze::pdf_csv(&rows)?,
        AnalyzeMode::Trace => analyze::trace_csv(&rows)?,
        AnalyzeMode::Groups => analyze::groups_csv(&rows, args.m_bins)?,
        AnalyzeMode::Corr => analyze::corr_csv(&rows, args.m_bins)?,
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, out)?;
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let svg_text = match args.kind {
        PlotKind::Reliability => svg::reliability_svg(&csvio::read_reliability(&args.input)?),
        PlotKind::Pdf => svg::pdf_svg(&csvio::read_pdf(&args.input)?),
        PlotKind::Pareto => svg::pareto_svg(&csvio::read_pareto(&args.input)?),
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, svg_text)?;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Analyze(args) => cmd_analyze(args),
        Cmd::Plot(args) => cmd_plot(args),
    }
}

//! Calibration metrics and the post-hoc temperature-scaling baseline.
//!
//! ECE bins predictions by top-class confidence into equal-width bins on
//! [0, 1] and sums the bin-weighted absolute gaps between accuracy and mean
//! confidence. SCE extends the same binning class-wise over every class's
//! predicted probability. Temperature scaling fits a divisor for the
//! pre-softmax logits on a labeled validation split by grid search over the
//! negative log-likelihood.

use crate::error::{LabError, Result};
use crate::model::{argmax, softmax};
use crate::objective::LossBreakdown;
use crate::tuner::PredictionRecord;

/// One reliability-diagram bin.
#[derive(Clone, Debug, PartialEq)]
pub struct BinStats {
    pub bin_index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

/// Aggregate calibration summary for one method run.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub n: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub sce: f64,
    pub bins: Vec<BinStats>,
    pub method_tag: String,
    pub config_echo: String,
}

impl CalibrationReport {
    pub fn compute(
        records: &[PredictionRecord],
        m_bins: usize,
        method_tag: impl Into<String>,
        config_echo: impl Into<String>,
    ) -> Result<Self> {
        let (ece_value, bins) = ece(records, m_bins)?;
        let sce_value = sce(records, m_bins)?;
        let n = records.len();
        let correct = records.iter().filter(|r| r.correct()).count();
        Ok(CalibrationReport {
            n,
            accuracy: correct as f64 / n as f64,
            ece: ece_value,
            sce: sce_value,
            bins,
            method_tag: method_tag.into(),
            config_echo: config_echo.into(),
        })
    }
}

/// Bin index for a confidence in [0, 1]: `floor(p * M)` clamped so that
/// `p = 1.0` lands in the top bin.
fn bin_of(p: f64, m_bins: usize) -> usize {
    ((p * m_bins as f64).floor() as usize).min(m_bins - 1)
}

/// Expected calibration error plus the per-bin reliability data. Empty bins
/// are kept in the output with zeroed statistics.
pub fn ece(records: &[PredictionRecord], m_bins: usize) -> Result<(f64, Vec<BinStats>)> {
    if records.is_empty() {
        return Err(LabError::EmptyInput);
    }
    if m_bins < 1 {
        return Err(LabError::InvalidSpec("m_bins must be >= 1".into()));
    }
    let mut count = vec![0usize; m_bins];
    let mut conf_sum = vec![0.0; m_bins];
    let mut correct = vec![0usize; m_bins];
    for r in records {
        let b = bin_of(r.confidence, m_bins);
        count[b] += 1;
        conf_sum[b] += r.confidence;
        if r.correct() {
            correct[b] += 1;
        }
    }
    let n = records.len() as f64;
    let width = 1.0 / m_bins as f64;
    let mut total = 0.0;
    let mut bins = Vec::with_capacity(m_bins);
    for b in 0..m_bins {
        let (acc, conf) = if count[b] > 0 {
            (correct[b] as f64 / count[b] as f64, conf_sum[b] / count[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            total += count[b] as f64 / n * (acc - conf).abs();
        }
        bins.push(BinStats {
            bin_index: b,
            lower: b as f64 * width,
            upper: if b + 1 == m_bins { 1.0 } else { (b + 1) as f64 * width },
            count: count[b],
            accuracy: acc,
            mean_confidence: conf,
        });
    }
    Ok((total, bins))
}

/// Static calibration error: the class-wise extension of ECE. Sample-class
/// pairs are binned by the predicted probability for that class; accuracy in
/// a bin is the fraction whose true label is that class.
pub fn sce(records: &[PredictionRecord], m_bins: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(LabError::EmptyInput);
    }
    if m_bins < 1 {
        return Err(LabError::InvalidSpec("m_bins must be >= 1".into()));
    }
    let n_classes = records[0].probs.len();
    if n_classes == 0 || records.iter().any(|r| r.probs.len() != n_classes) {
        return Err(LabError::DimensionMismatch(
            "records must carry full probability vectors of equal length".into(),
        ));
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    for class in 0..n_classes {
        let mut count = vec![0usize; m_bins];
        let mut conf_sum = vec![0.0; m_bins];
        let mut hits = vec![0usize; m_bins];
        for r in records {
            let p = r.probs[class];
            let b = bin_of(p, m_bins);
            count[b] += 1;
            conf_sum[b] += p;
            if r.true_label == class {
                hits[b] += 1;
            }
        }
        for b in 0..m_bins {
            if count[b] == 0 {
                continue;
            }
            let acc = hits[b] as f64 / count[b] as f64;
            let conf = conf_sum[b] / count[b] as f64;
            total += count[b] as f64 / n * (acc - conf).abs();
        }
    }
    Ok(total / n_classes as f64)
}

/// A prediction that still carries its pre-softmax logits, as needed for
/// temperature fitting and rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitRecord {
    pub logits: Vec<f64>,
    pub true_label: usize,
    /// Diagnostic carried through to rebuilt records.
    pub mean_pairwise_cos: f64,
}

/// Log-spaced default search grid: 200 points covering [0.01, 10].
pub fn default_temperature_grid() -> Vec<f64> {
    (0..200)
        .map(|k| 10f64.powf(-2.0 + 3.0 * k as f64 / 199.0))
        .collect()
}

fn mean_nll(records: &[LogitRecord], tau: f64) -> f64 {
    let mut total = 0.0;
    for r in records {
        let scaled: Vec<f64> = r.logits.iter().map(|l| l / tau).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = scaled.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        total += log_z - scaled[r.true_label];
    }
    total / records.len() as f64
}

/// Grid-searched temperature minimizing mean NLL on the validation records.
/// Ties keep the earliest (smallest, for the default ascending grid) value.
pub fn fit_temperature(records: &[LogitRecord], grid: &[f64]) -> Result<f64> {
    if records.is_empty() || grid.is_empty() {
        return Err(LabError::EmptyInput);
    }
    if grid.iter().any(|t| *t <= 0.0) {
        return Err(LabError::InvalidSpec("temperatures must be positive".into()));
    }
    let mut best_tau = grid[0];
    let mut best_nll = mean_nll(records, grid[0]);
    for &tau in &grid[1..] {
        let nll = mean_nll(records, tau);
        if nll < best_nll {
            best_nll = nll;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

/// Rebuilds prediction records with probabilities `softmax(logits / tau)`.
/// The argmax is unchanged for any positive temperature.
pub fn apply_temperature(records: &[LogitRecord], tau: f64) -> Vec<PredictionRecord> {
    assert!(tau > 0.0, "temperature must be positive");
    records
        .iter()
        .map(|r| {
            let scaled: Vec<f64> = r.logits.iter().map(|l| l / tau).collect();
            let probs = softmax(&scaled);
            let predicted = argmax(&probs);
            PredictionRecord {
                confidence: probs[predicted],
                predicted,
                true_label: r.true_label,
                mean_pairwise_cos: r.mean_pairwise_cos,
                loss_breakdown: LossBreakdown::entropy_only(crate::objective::entropy(&probs)),
                probs,
            }
        })
        .collect()
}

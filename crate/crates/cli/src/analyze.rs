//! Analyses over per-sample prediction records: the cosine histogram, the
//! per-sample cosine trace, the median-split group comparison, and the
//! dispersion-vs-ECE correlation across prompt seeds.

use otpt_core::calibration::ece;
use otpt_core::error::{LabError, Result};
use otpt_core::objective::LossBreakdown;
use otpt_core::tuner::PredictionRecord;

use crate::csvio::{fmt_f64, RecordRow};

pub const PDF_BINS: usize = 50;

/// Methods in order of first appearance in the file.
fn methods_in_order(rows: &[RecordRow]) -> Vec<String> {
    let mut seen = Vec::new();
    for r in rows {
        if !seen.contains(&r.method) {
            seen.push(r.method.clone());
        }
    }
    seen
}

fn min_seed(rows: &[RecordRow]) -> u64 {
    rows.iter().map(|r| r.seed).min().unwrap_or(0)
}

fn to_prediction_record(r: &RecordRow) -> PredictionRecord {
    PredictionRecord {
        probs: r.probs.clone(),
        predicted: r.predicted,
        confidence: r.confidence,
        true_label: r.true_label,
        mean_pairwise_cos: r.mean_pairwise_cos,
        loss_breakdown: LossBreakdown {
            l_tpt: 0.0,
            l_ortho: 0.0,
            l_atfd: 0.0,
            total: 0.0,
            lambda_ortho: 0.0,
            lambda_atfd: 0.0,
        },
    }
}

fn ece_of(rows: &[&RecordRow], m_bins: usize) -> Result<f64> {
    let records: Vec<PredictionRecord> = rows.iter().map(|r| to_prediction_record(r)).collect();
    Ok(ece(&records, m_bins)?.0)
}

/// Histogram of per-sample mean pairwise text-feature cosines, one density
/// column per method, 50 equal bins on [-1, 1].
pub fn pdf_csv(rows: &[RecordRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(LabError::EmptyInput);
    }
    let methods = methods_in_order(rows);
    let width = 2.0 / PDF_BINS as f64;
    let mut header = String::from("bin_center");
    for m in &methods {
        header.push_str(&format!(",density_{m}"));
    }
    let mut counts = vec![vec![0usize; PDF_BINS]; methods.len()];
    let mut totals = vec![0usize; methods.len()];
    for r in rows {
        let mi = methods.iter().position(|m| *m == r.method).unwrap();
        let bin = (((r.mean_pairwise_cos + 1.0) / width).floor() as isize)
            .clamp(0, PDF_BINS as isize - 1) as usize;
        counts[mi][bin] += 1;
        totals[mi] += 1;
    }
    let mut out = header;
    out.push('\n');
    for b in 0..PDF_BINS {
        let center = -1.0 + (b as f64 + 0.5) * width;
        out.push_str(&fmt_f64(center));
        for (mi, _) in methods.iter().enumerate() {
            let density = counts[mi][b] as f64 / (totals[mi] as f64 * width);
            out.push(',');
            out.push_str(&fmt_f64(density));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Per-sample mean pairwise cosine per method in sample order, for the
/// lowest prompt seed present in the file.
pub fn trace_csv(rows: &[RecordRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(LabError::EmptyInput);
    }
    let seed = min_seed(rows);
    let subset: Vec<&RecordRow> = rows.iter().filter(|r| r.seed == seed).collect();
    let methods = methods_in_order(rows);
    let mut indices: Vec<usize> = subset.iter().map(|r| r.sample_index).collect();
    indices.sort_unstable();
    indices.dedup();

    let mut header = String::from("sample_index");
    for m in &methods {
        header.push_str(&format!(",cos_{m}"));
    }
    let mut out = header;
    out.push('\n');
    for &i in &indices {
        out.push_str(&i.to_string());
        for m in &methods {
            let cell = subset
                .iter()
                .find(|r| r.sample_index == i && r.method == *m)
                .map(|r| fmt_f64(r.mean_pairwise_cos))
                .unwrap_or_default();
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Median of already-sorted values: midpoint of the two central elements
/// for even counts.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 0 {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    }
}

/// Splits samples at the median of the tpt run's per-sample cosine and
/// reports per-group accuracy and ECE for every method. Samples exactly at
/// the median go by sample-index parity: odd above, even below.
pub fn groups_csv(rows: &[RecordRow], m_bins: usize) -> Result<String> {
    if rows.is_empty() {
        return Err(LabError::EmptyInput);
    }
    let seed = min_seed(rows);
    let subset: Vec<&RecordRow> = rows.iter().filter(|r| r.seed == seed).collect();
    let tpt: Vec<&&RecordRow> = subset.iter().filter(|r| r.method == "tpt").collect();
    if tpt.is_empty() {
        return Err(LabError::MissingMethod(
            "groups analysis needs tpt records".into(),
        ));
    }
    let mut cos_by_index: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for r in &tpt {
        cos_by_index.insert(r.sample_index, r.mean_pairwise_cos);
    }
    let mut sorted: Vec<f64> = cos_by_index.values().copied().collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = median_sorted(&sorted);
    let is_above = |index: usize| -> Option<bool> {
        cos_by_index.get(&index).map(|c| {
            if *c == median {
                index % 2 == 1
            } else {
                *c > median
            }
        })
    };

    let methods = methods_in_order(rows);
    let mut out = String::from("method,group,count,accuracy,ece\n");
    for m in &methods {
        for (gname, want_above) in [("above", true), ("below", false)] {
            let grp: Vec<&RecordRow> = subset
                .iter()
                .filter(|r| r.method == *m && is_above(r.sample_index) == Some(want_above))
                .copied()
                .collect();
            if grp.is_empty() {
                out.push_str(&format!("{m},{gname},0,,\n"));
                continue;
            }
            let acc = grp.iter().filter(|r| r.predicted == r.true_label).count() as f64
                / grp.len() as f64;
            let e = ece_of(&grp, m_bins)?;
            out.push_str(&format!(
                "{m},{gname},{},{},{}\n",
                grp.len(),
                fmt_f64(acc),
                fmt_f64(e)
            ));
        }
    }
    Ok(out)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Per prompt seed: the zero-shot mean pairwise cosine and zero-shot ECE,
/// plus a Pearson correlation footer ("NA" when undefined).
pub fn corr_csv(rows: &[RecordRow], m_bins: usize) -> Result<String> {
    if rows.is_empty() {
        return Err(LabError::EmptyInput);
    }
    let zs: Vec<&RecordRow> = rows.iter().filter(|r| r.method == "zeroshot").collect();
    if zs.is_empty() {
        return Err(LabError::MissingMethod(
            "corr analysis needs zeroshot records".into(),
        ));
    }
    let mut seeds: Vec<u64> = zs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut out = String::from("seed,zeroshot_mean_cos,zeroshot_ece\n");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &seed in &seeds {
        let grp: Vec<&RecordRow> = zs.iter().filter(|r| r.seed == seed).copied().collect();
        let cos = grp.iter().map(|r| r.mean_pairwise_cos).sum::<f64>() / grp.len() as f64;
        let e = ece_of(&grp, m_bins)?;
        xs.push(cos);
        ys.push(e);
        out.push_str(&format!("{seed},{},{}\n", fmt_f64(cos), fmt_f64(e)));
    }
    match pearson(&xs, &ys) {
        Some(r) => out.push_str(&format!("pearson_r,{},\n", fmt_f64(r))),
        None => out.push_str("pearson_r,NA,\n"),
    }
    Ok(out)
}

//! CSV writers and readers for the lab's interchange files.
//!
//! All floats are formatted with [`fmt_f64`] (17 significant digits, exact
//! round trip for f64), headers are literal, and row order is fully
//! determined by the caller, so files diff cleanly and can serve as goldens.

use std::path::Path;

use otpt_core::calibration::BinStats;
use otpt_core::error::{LabError, Result};

/// 17 significant digits; round-trip exact for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// One line of results.csv.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub lambda_ortho: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub ece: f64,
    pub sce: f64,
    pub mean_pairwise_cos: f64,
}

pub const RESULTS_HEADER: &str = "method,lambda_ortho,seed,accuracy,ece,sce,mean_pairwise_cos";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            fmt_f64(r.lambda_ortho),
            r.seed,
            fmt_f64(r.accuracy),
            fmt_f64(r.ece),
            fmt_f64(r.sce),
            fmt_f64(r.mean_pairwise_cos)
        ));
    }
    out
}

/// One line of records.csv (a flattened prediction record).
#[derive(Clone, Debug, PartialEq)]
pub struct RecordRow {
    pub sample_index: usize,
    pub method: String,
    pub seed: u64,
    pub true_label: usize,
    pub predicted: usize,
    pub confidence: f64,
    pub mean_pairwise_cos: f64,
    pub probs: Vec<f64>,
}

pub fn records_header(n_classes: usize) -> String {
    let mut h = String::from(
        "sample_index,method,seed,true_label,predicted,confidence,mean_pairwise_cos",
    );
    for c in 0..n_classes {
        h.push_str(&format!(",prob_{c}"));
    }
    h
}

pub fn records_csv(rows: &[RecordRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(LabError::EmptyInput);
    }
    let n_classes = rows[0].probs.len();
    let mut out = records_header(n_classes);
    out.push('\n');
    for r in rows {
        if r.probs.len() != n_classes {
            return Err(LabError::DimensionMismatch(
                "records carry differing class counts".into(),
            ));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.sample_index,
            r.method,
            r.seed,
            r.true_label,
            r.predicted,
            fmt_f64(r.confidence),
            fmt_f64(r.mean_pairwise_cos)
        ));
        for p in &r.probs {
            out.push(',');
            out.push_str(&fmt_f64(*p));
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| LabError::SchemaMismatch(format!("cannot parse `{s}` as {what}")))
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(LabError::EmptyInput)?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 8
        || cols[..7]
            != [
                "sample_index",
                "method",
                "seed",
                "true_label",
                "predicted",
                "confidence",
                "mean_pairwise_cos",
            ]
    {
        return Err(LabError::SchemaMismatch(format!(
            "unexpected records header `{header}`"
        )));
    }
    let n_classes = cols.len() - 7;
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 + n_classes {
            return Err(LabError::SchemaMismatch(format!(
                "row has {} fields, expected {}",
                f.len(),
                7 + n_classes
            )));
        }
        rows.push(RecordRow {
            sample_index: parse_field(f[0], "sample_index")?,
            method: f[1].to_string(),
            seed: parse_field(f[2], "seed")?,
            true_label: parse_field(f[3], "true_label")?,
            predicted: parse_field(f[4], "predicted")?,
            confidence: parse_field(f[5], "confidence")?,
            mean_pairwise_cos: parse_field(f[6], "mean_pairwise_cos")?,
            probs: f[7..]
                .iter()
                .map(|s| parse_field::<f64>(s, "probability"))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

pub const RELIABILITY_HEADER: &str = "bin_index,lower,upper,count,accuracy,mean_confidence";

pub fn reliability_csv(bins: &[BinStats]) -> String {
    let mut out = String::from(RELIABILITY_HEADER);
    out.push('\n');
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.bin_index,
            fmt_f64(b.lower),
            fmt_f64(b.upper),
            b.count,
            fmt_f64(b.accuracy),
            fmt_f64(b.mean_confidence)
        ));
    }
    out
}

/// Parsed reliability row for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityRow {
    pub bin_index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

pub fn read_reliability(path: &Path) -> Result<Vec<ReliabilityRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(LabError::EmptyInput)?;
    if header != RELIABILITY_HEADER {
        return Err(LabError::SchemaMismatch(format!(
            "expected reliability header, got `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(LabError::SchemaMismatch("reliability row needs 6 fields".into()));
        }
        rows.push(ReliabilityRow {
            bin_index: parse_field(f[0], "bin_index")?,
            lower: parse_field(f[1], "lower")?,
            upper: parse_field(f[2], "upper")?,
            count: parse_field(f[3], "count")?,
            accuracy: parse_field(f[4], "accuracy")?,
            mean_confidence: parse_field(f[5], "mean_confidence")?,
        });
    }
    Ok(rows)
}

pub const PARETO_HEADER: &str = "lambda,accuracy,ece,mean_pairwise_cos";

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub mean_pairwise_cos: f64,
}

pub fn pareto_csv(rows: &[ParetoRow]) -> String {
    let mut out = String::from(PARETO_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.lambda),
            fmt_f64(r.accuracy),
            fmt_f64(r.ece),
            fmt_f64(r.mean_pairwise_cos)
        ));
    }
    out
}

pub fn read_pareto(path: &Path) -> Result<Vec<ParetoRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(LabError::EmptyInput)?;
    if header != PARETO_HEADER {
        return Err(LabError::SchemaMismatch(format!(
            "expected pareto header, got `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(LabError::SchemaMismatch("pareto row needs 4 fields".into()));
        }
        rows.push(ParetoRow {
            lambda: parse_field(f[0], "lambda")?,
            accuracy: parse_field(f[1], "accuracy")?,
            ece: parse_field(f[2], "ece")?,
            mean_pairwise_cos: parse_field(f[3], "mean_pairwise_cos")?,
        });
    }
    Ok(rows)
}

/// PDF-histogram table: first column is the bin center, one density column
/// per method.
#[derive(Clone, Debug, PartialEq)]
pub struct PdfTable {
    pub methods: Vec<String>,
    pub bin_centers: Vec<f64>,
    /// `series[m][bin]` parallel to `methods` and `bin_centers`.
    pub series: Vec<Vec<f64>>,
}

pub fn read_pdf(path: &Path) -> Result<PdfTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(LabError::EmptyInput)?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "bin_center" || !cols[1..].iter().all(|c| c.starts_with("density_")) {
        return Err(LabError::SchemaMismatch(format!(
            "expected pdf header, got `{header}`"
        )));
    }
    let methods: Vec<String> = cols[1..]
        .iter()
        .map(|c| c.trim_start_matches("density_").to_string())
        .collect();
    let mut bin_centers = Vec::new();
    let mut series = vec![Vec::new(); methods.len()];
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(LabError::SchemaMismatch("pdf row width mismatch".into()));
        }
        bin_centers.push(parse_field(f[0], "bin_center")?);
        for (m, v) in f[1..].iter().enumerate() {
            series[m].push(parse_field(v, "density")?);
        }
    }
    Ok(PdfTable { methods, bin_centers, series })
}

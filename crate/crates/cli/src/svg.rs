//! Deterministic SVG rendering for reliability diagrams, cosine histograms
//! and the λ Pareto front. Pure string building: no timestamps, no
//! randomness, fixed float formatting, so golden files are byte-stable.

use crate::csvio::{ParetoRow, PdfTable, ReliabilityRow};

const W: f64 = 560.0;
const H: f64 = 560.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_TOP: f64 = 30.0;
const PLOT_W: f64 = 460.0;
const PLOT_H: f64 = 460.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt(x: f64) -> String {
    format!("{x:.4}")
}

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"20\" font-family=\"monospace\" font-size=\"14\" ",
            "text-anchor=\"middle\">{title}</text>\n"
        ),
        w = W,
        h = H,
        tx = MARGIN_LEFT + PLOT_W / 2.0,
        title = title
    )
}

fn axes(x_label: &str, y_label: &str) -> String {
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + PLOT_H;
    let mut s = format!(
        concat!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            "<line x1=\"{x0}\" y1=\"{yt}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n"
        ),
        x0 = fmt(x0),
        y0 = fmt(y0),
        x1 = fmt(x0 + PLOT_W),
        yt = fmt(MARGIN_TOP)
    );
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        fmt(MARGIN_LEFT + PLOT_W / 2.0),
        fmt(H - 15.0),
        x_label
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        fmt(MARGIN_TOP + PLOT_H / 2.0),
        fmt(MARGIN_TOP + PLOT_H / 2.0),
        y_label
    ));
    s
}

fn unit_ticks() -> String {
    let mut s = String::new();
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let x = MARGIN_LEFT + frac * PLOT_W;
        let y = MARGIN_TOP + PLOT_H - frac * PLOT_H;
        let base = MARGIN_TOP + PLOT_H;
        s.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{y1}\" stroke=\"black\"/>\n",
            x = fmt(x),
            y0 = fmt(base),
            y1 = fmt(base + 5.0)
        ));
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{ty}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{v}</text>\n",
            x = fmt(x),
            ty = fmt(base + 18.0),
            v = fmt(frac)
        ));
        s.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"black\"/>\n",
            x0 = fmt(MARGIN_LEFT - 5.0),
            x1 = fmt(MARGIN_LEFT),
            y = fmt(y)
        ));
        s.push_str(&format!(
            "<text x=\"{tx}\" y=\"{ty}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{v}</text>\n",
            tx = fmt(MARGIN_LEFT - 8.0),
            ty = fmt(y + 3.0),
            v = fmt(frac)
        ));
    }
    s
}

/// Reliability diagram: accuracy bars per confidence bin against the
/// identity diagonal, with a red overlay spanning the accuracy-confidence
/// gap. Empty bins render as zero-height bars.
pub fn reliability_svg(bins: &[ReliabilityRow]) -> String {
    let mut s = header("reliability diagram");
    s.push_str(&axes("confidence", "accuracy"));
    s.push_str(&unit_ticks());
    let base = MARGIN_TOP + PLOT_H;
    for b in bins {
        let x = MARGIN_LEFT + b.lower * PLOT_W;
        let w = (b.upper - b.lower) * PLOT_W;
        let bar_h = b.accuracy * PLOT_H;
        s.push_str(&format!(
            "<rect class=\"bar\" x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#1f77b4\" fill-opacity=\"0.8\" stroke=\"black\" stroke-width=\"0.5\"/>\n",
            x = fmt(x + 1.0),
            y = fmt(base - bar_h),
            w = fmt((w - 2.0).max(0.0)),
            h = fmt(bar_h)
        ));
        if b.count > 0 {
            let top = b.accuracy.max(b.mean_confidence) * PLOT_H;
            let gap_h = (b.accuracy - b.mean_confidence).abs() * PLOT_H;
            s.push_str(&format!(
                "<rect class=\"gap\" x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"#d62728\" fill-opacity=\"0.45\"/>\n",
                x = fmt(x + 1.0),
                y = fmt(base - top),
                w = fmt((w - 2.0).max(0.0)),
                h = fmt(gap_h)
            ));
        }
    }
    s.push_str(&format!(
        "<line class=\"diag\" x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n",
        x0 = fmt(MARGIN_LEFT),
        y0 = fmt(base),
        x1 = fmt(MARGIN_LEFT + PLOT_W),
        y1 = fmt(MARGIN_TOP)
    ));
    s.push_str("</svg>\n");
    s
}

/// Histogram polylines of per-sample text-feature cosines, one per method.
pub fn pdf_svg(table: &PdfTable) -> String {
    let mut s = header("cosine similarity density");
    s.push_str(&axes("mean pairwise cosine", "density"));
    let max_density = table
        .series
        .iter()
        .flatten()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let base = MARGIN_TOP + PLOT_H;
    for (mi, method) in table.methods.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let points: Vec<String> = table
            .bin_centers
            .iter()
            .zip(&table.series[mi])
            .map(|(c, d)| {
                let x = MARGIN_LEFT + (c + 1.0) / 2.0 * PLOT_W;
                let y = base - d / max_density * PLOT_H;
                format!("{},{}", fmt(x), fmt(y))
            })
            .collect();
        s.push_str(&format!(
            "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            points.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{method}</text>\n",
            x = fmt(MARGIN_LEFT + 10.0),
            y = fmt(MARGIN_TOP + 16.0 + 14.0 * mi as f64),
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Accuracy-vs-ECE trade-off scatter, points connected in λ order and
/// labeled by λ.
pub fn pareto_svg(rows: &[ParetoRow]) -> String {
    let mut s = header("accuracy-ece trade-off");
    s.push_str(&axes("ece", "accuracy"));
    let max_ece = rows.iter().map(|r| r.ece).fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let min_acc = rows.iter().map(|r| r.accuracy).fold(1.0f64, f64::min);
    let max_acc = rows.iter().map(|r| r.accuracy).fold(0.0f64, f64::max);
    let span = (max_acc - min_acc).max(1e-3);
    let (lo, hi) = (min_acc - 0.2 * span, max_acc + 0.2 * span);
    let base = MARGIN_TOP + PLOT_H;
    let xy = |r: &ParetoRow| {
        let x = MARGIN_LEFT + r.ece / max_ece * PLOT_W;
        let y = base - (r.accuracy - lo) / (hi - lo) * PLOT_H;
        (x, y)
    };
    let points: Vec<String> = rows
        .iter()
        .map(|r| {
            let (x, y) = xy(r);
            format!("{},{}", fmt(x), fmt(y))
        })
        .collect();
    s.push_str(&format!(
        "<polyline class=\"front\" points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\"/>\n",
        points.join(" ")
    ));
    for r in rows {
        let (x, y) = xy(r);
        s.push_str(&format!(
            "<circle class=\"pt\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#d62728\"/>\n",
            fmt(x),
            fmt(y)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">lambda={}</text>\n",
            fmt(x + 6.0),
            fmt(y - 6.0),
            r.lambda
        ));
    }
    s.push_str("</svg>\n");
    s
}

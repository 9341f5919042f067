//! CSV and SVG outputs. CSVs are UTF-8, comma separated, LF terminated and
//! always start with a header row.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use crate::metrics::{MetricsReport, PercentileTable};

pub const REPORT_HEADER: &str = "in_dist,ood,method,seed,fpr95,err,auroc,aupr,accuracy";
pub const SWEEP_HEADER: &str = "batch_size,in_dist,ood,method,seed,fpr95,err,auroc,aupr,accuracy";
pub const PERCENTILE_HEADER: &str = "threshold,pct_in,pct_ood";

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_line(r: &MetricsReport) -> String {
    let acc = r.accuracy.map(|a| format!("{a:.2}")).unwrap_or_default();
    format!(
        "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{}",
        field(&r.in_dist),
        field(&r.ood),
        field(&r.method),
        field(&r.seed),
        r.fpr95,
        r.err,
        r.auroc,
        r.aupr,
        acc
    )
}

pub fn render_report(rows: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&report_line(r));
        out.push('\n');
    }
    out
}

pub fn render_sweep(rows: &[(usize, MetricsReport)]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for (bs, r) in rows {
        let _ = writeln!(out, "{bs},{}", report_line(r));
    }
    out
}

pub fn render_percentiles(t: &PercentileTable) -> String {
    let mut out = String::from(PERCENTILE_HEADER);
    out.push('\n');
    for r in &t.rows {
        let _ = writeln!(out, "{:.6},{:.2},{:.2}", r.threshold, r.pct_in, r.pct_ood);
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()
}

/// Cumulative percentage curves for both populations with the least
/// in-distribution score marked; the region to its right holds the OOD mass
/// that would be accepted.
pub fn percentile_svg(t: &PercentileTable, title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let lo = t.rows.first().map_or(0.0, |r| r.threshold);
    let hi = t.rows.last().map_or(1.0, |r| r.threshold);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |v: f64| pad + (v - lo) / span * (w - 2.0 * pad);
    let y = |pct: f64| h - pad - pct / 100.0 * (h - 2.0 * pad);
    let path = |sel: fn(&crate::metrics::PercentileRow) -> f64| {
        t.rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.threshold), y(sel(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let tx = x(t.threshold);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{tx:.2}" y="{pad}" width="{:.2}" height="{:.2}" fill="red" fill-opacity="0.12"/>"#,
        (w - pad - tx).max(0.0),
        h - 2.0 * pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path(|r| r.pct_in));
    let _ = writeln!(s, r#"<polyline fill="none" stroke="darkorange" stroke-width="2" points="{}"/>"#, path(|r| r.pct_ood));
    let _ = writeln!(s, r#"<line x1="{tx:.2}" y1="{pad}" x2="{tx:.2}" y2="{}" stroke="red" stroke-dasharray="4 3"/>"#, h - pad);
    let _ = writeln!(s, r#"<text x="{pad}" y="30" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="12">max-softmax score ({lo:.3} to {hi:.3}); OOD at or above threshold: {:.1}%</text>"#,
        h - 15.0,
        100.0 * t.ood_mass_above
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="steelblue">in-dist %</text>"#, w - 120.0, pad + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="darkorange">OOD %</text>"#, w - 120.0, pad + 30.0);
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::summary::{Summary, BUCKET};
use super::TrialRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "variant,method,success_mean,success_std,steps_mean,steps_std,recoveries_mean";

const PALETTE: [&str; 4] = ["#7f7f7f", "#1f77b4", "#ff7f0e", "#2ca02c"];

/// One JSON object per line, in the given order.
pub fn write_records(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &summary.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.variant, r.method, r.success_mean, r.success_std, r.steps_mean, r.steps_std, r.recoveries_mean
        );
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars of success rate per method within each variant, with std error bars.
pub fn success_svg(summary: &Summary) -> String {
    let mut variants = Vec::new();
    let mut methods = Vec::new();
    for r in &summary.rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let (left, top, plot_h, bar_w, gap) = (60.0, 30.0, 240.0, 28.0, 40.0);
    let group_w = bar_w * methods.len() as f64 + gap;
    let width = left + group_w * variants.len() as f64 + 180.0;
    let height = top + plot_h + 60.0;
    let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="13">Success rate</text>"#);
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy}" x2="{x2}" y2="{yy}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.1}</text>"##,
            yy = y(v),
            x2 = width - 180.0,
            tx = left - 6.0,
            ty = y(v) + 4.0
        );
    }
    for (vi, variant) in variants.iter().enumerate() {
        let gx = left + gap / 2.0 + group_w * vi as f64;
        for (mi, method) in methods.iter().enumerate() {
            let Some(row) = summary.row(*variant, *method) else {
                continue;
            };
            let x = gx + bar_w * mi as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{ry}" width="{w}" height="{h}" fill="{c}"/>"#,
                ry = y(row.success_mean),
                w = bar_w - 4.0,
                h = plot_h * row.success_mean.clamp(0.0, 1.0),
                c = PALETTE[mi % PALETTE.len()]
            );
            let cx = x + (bar_w - 4.0) / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx}" y1="{lo}" x2="{cx}" y2="{hi}" stroke="black"/>"#,
                lo = y(row.success_mean - row.success_std),
                hi = y(row.success_mean + row.success_std)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{tx}" y="{ty}" text-anchor="middle">{name}</text>"#,
            tx = gx + bar_w * methods.len() as f64 / 2.0,
            ty = top + plot_h + 18.0,
            name = escape(variant.name())
        );
    }
    let lx = width - 170.0;
    for (mi, method) in methods.iter().enumerate() {
        let ly = top + 16.0 * mi as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{c}"/><text x="{tx}" y="{ty}">{name}</text>"#,
            c = PALETTE[mi % PALETTE.len()],
            tx = lx + 14.0,
            ty = ly + 9.0,
            name = escape(method.name())
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One panel per `(variant, method)` with recoveries; the dashed line marks the mean expert length.
pub fn recovery_histogram_svg(summary: &Summary) -> String {
    let rows: Vec<_> = summary.rows.iter().filter(|r| r.recoveries_total > 0).collect();
    let buckets = rows
        .iter()
        .map(|r| r.recovery_time_histogram.len())
        .max()
        .unwrap_or(1)
        .max(1);
    let (left, panel_w, panel_h, pad) = (50.0, 360.0, 120.0, 40.0);
    let bw = panel_w / buckets as f64;
    let height = pad + (panel_h + pad) * rows.len().max(1) as f64;
    let width = left + panel_w + 30.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="18" font-size="13">Attempt length at recovery trigger ({BUCKET}-step buckets)</text>"#
    );
    if rows.is_empty() {
        let _ = writeln!(s, r#"<text x="{left}" y="{}">no recoveries</text>"#, pad + 20.0);
    }
    for (pi, row) in rows.iter().enumerate() {
        let top = pad + (panel_h + pad) * pi as f64;
        let peak = row.recovery_time_histogram.iter().copied().max().unwrap_or(1).max(1) as f64;
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="{ty}">{v} / {m}</text>"#,
            ty = top - 4.0,
            v = escape(row.variant.name()),
            m = escape(row.method.name())
        );
        let _ = writeln!(
            s,
            r#"<line x1="{left}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
            b = top + panel_h,
            r = left + panel_w
        );
        for (bi, &count) in row.recovery_time_histogram.iter().enumerate() {
            let h = panel_h * count as f64 / peak;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{yy}" width="{w}" height="{h}" fill="#1f77b4"/>"##,
                x = left + bw * bi as f64,
                yy = top + panel_h - h,
                w = (bw - 1.0).max(0.5)
            );
        }
        let tx = left + bw * row.mean_expert_length / BUCKET as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{tx}" y1="{top}" x2="{tx}" y2="{b}" stroke="red" stroke-dasharray="4 3"/>"#,
            b = top + panel_h
        );
        if let Some(f) = row.early_recovery_fraction {
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" text-anchor="end">{pct:.0}% before expert length</text>"#,
                x = left + panel_w,
                y = top + 12.0,
                pct = 100.0 * f
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Write every report artifact into `out_dir`; returns the written paths.
pub fn write_report(summary: &Summary, records: &[TrialRecord], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if summary.rows.is_empty() || records.is_empty() {
        return Err(Error::Validation("refusing to write an empty report".into()));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = [
        "summary.json",
        "trials.jsonl",
        "summary.csv",
        "success.svg",
        "recovery_histogram.svg",
    ]
    .iter()
    .map(|n| dir.join(n))
    .collect();
    write_file(&paths[0], &serde_json::to_string_pretty(summary)?)?;
    write_records(records, &paths[1])?;
    write_file(&paths[2], &summary_csv(summary))?;
    write_file(&paths[3], &success_svg(summary))?;
    write_file(&paths[4], &recovery_histogram_svg(summary))?;
    Ok(paths)
}

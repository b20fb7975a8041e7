//! Figures and a summary table from a results CSV.
//!
//! Charts are plain SVG written by hand: one NMSE-vs-CR line chart per
//! scenario with a categorical CR axis, and one bar chart for the
//! augmentation study.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::cr_label;
use super::experiment::{ResultRow, RESULT_COLUMNS};
use crate::error::{Error, Result};

/// Files written by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub rows: usize,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Reads a results CSV. Errors carry the 1-based line number.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be {}", RESULT_COLUMNS.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: ResultRow = rec.deserialize(None).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn is_study(method: &str) -> bool {
    method.starts_with("aug-")
}

/// Distinct CRs in descending order (least compression first).
fn cr_axis(rows: &[ResultRow]) -> Vec<f64> {
    let mut crs: Vec<f64> = Vec::new();
    for r in rows {
        if !crs.contains(&r.cr) {
            crs.push(r.cr);
        }
    }
    crs.sort_by(|a, b| b.total_cmp(a));
    crs
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes `summary.md` and the charts for `results_csv` into `out_dir`.
pub fn report(results_csv: &Path, out_dir: &Path) -> Result<ReportOutput> {
    let rows = read_results(results_csv)?;
    report_rows(&rows, out_dir)
}

pub fn report_rows(rows: &[ResultRow], out_dir: &Path) -> Result<ReportOutput> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut plots = Vec::new();
    let crs = cr_axis(rows);

    let mut by_scenario: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !is_study(&r.method)) {
        by_scenario.entry(&r.scenario).or_default().push(r);
    }
    for (scenario, rs) in &by_scenario {
        let mut series: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
        for r in rs {
            let slot = crs.iter().position(|&c| c == r.cr).expect("axis holds every CR");
            series.entry(&r.method).or_insert_with(|| vec![None; crs.len()])[slot] = Some(r.nmse_db);
        }
        let labels: Vec<String> = crs.iter().map(|&c| cr_label(c)).collect();
        let svg = line_chart(&format!("NMSE vs CR: {scenario}"), &labels, &series);
        let path = out_dir.join(format!("nmse_vs_cr_{}.svg", file_safe(scenario)));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        plots.push(path);
    }

    let study: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| is_study(&r.method))
        .map(|r| (format!("{} @ {}", r.method, cr_label(r.cr)), r.nmse_db))
        .collect();
    if !study.is_empty() {
        let path = out_dir.join("augmentation.svg");
        fs::write(&path, bar_chart("Augmentation study", &study)).map_err(|e| Error::io(&path, e))?;
        plots.push(path);
    }

    let summary = out_dir.join("summary.md");
    fs::write(&summary, summary_table(rows)).map_err(|e| Error::io(&summary, e))?;
    Ok(ReportOutput {
        rows: rows.len(),
        summary,
        plots,
    })
}

pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut s = String::from("# Results\n\n");
    let _ = writeln!(s, "{} rows.\n", rows.len());
    s.push_str("| experiment | CR | scenario | method | NMSE (dB) | params updated | wall time (s) |\n");
    s.push_str("|---|---|---|---|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.2} | {} | {:.1} |",
            r.experiment_id,
            cr_label(r.cr),
            r.scenario,
            r.method,
            r.nmse_db,
            r.params_updated,
            r.wall_time_s
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Padded `[lo, hi]` covering `values`.
fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (-1.0, 0.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.5);
    ((lo - pad).floor(), (hi + pad).ceil())
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn y_axis(s: &mut String, lo: f64, hi: f64, y_of: &dyn Fn(f64) -> f64) {
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        H - BOTTOM
    );
    let ticks = 5;
    for k in 0..=ticks {
        let v = lo + (hi - lo) * k as f64 / ticks as f64;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text class="y-tick" x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">NMSE (dB)</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0
    );
}

/// Line chart over categorical x labels; gaps where a series has no value.
pub fn line_chart(title: &str, x_labels: &[String], series: &BTreeMap<&str, Vec<Option<f64>>>) -> String {
    let (lo, hi) = y_range(series.values().flatten().flatten().copied());
    let plot_w = W - LEFT - RIGHT;
    let n = x_labels.len().max(1);
    let x_of = |k: usize| LEFT + plot_w * (k as f64 + 0.5) / n as f64;
    let y_of = |v: f64| TOP + (H - TOP - BOTTOM) * (hi - v) / (hi - lo);
    let mut s = svg_open(title);
    y_axis(&mut s, lo, hi, &y_of);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - BOTTOM,
        W - RIGHT
    );
    for (k, label) in x_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="x-tick" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x_of(k),
            H - BOTTOM + 18.0,
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">CR</text>"#,
        LEFT + plot_w / 2.0,
        H - 16.0
    );
    for (idx, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, s: &mut String| {
            if run.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    run.join(" ")
                );
            }
            run.clear();
        };
        for (k, v) in values.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => {
                    let (x, y) = (x_of(k), y_of(*v));
                    run.push(format!("{x:.1},{y:.1}"));
                    let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{color}"/>"#);
                }
                _ => flush(&mut run, &mut s),
            }
        }
        flush(&mut run, &mut s);
        let ly = TOP + 10.0 + 18.0 * idx as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.1}" width="12" height="12" fill="{color}"/><text class="legend" x="{}" y="{ly:.1}">{}</text>"#,
            ly - 10.0,
            lx + 18.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per `(label, value)`; NMSE values are negative, so
/// bars hang from the top of the range.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (lo, hi) = y_range(bars.iter().map(|b| b.1).chain(std::iter::once(0.0)));
    let hi = hi.min(0.0).max(lo + 1.0);
    let plot_w = W - LEFT - RIGHT;
    let n = bars.len().max(1);
    let slot = plot_w / n as f64;
    let y_of = |v: f64| TOP + (H - TOP - BOTTOM) * (hi - v) / (hi - lo);
    let mut s = svg_open(title);
    y_axis(&mut s, lo, hi, &y_of);
    for (k, (label, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * k as f64 + slot * 0.15;
        let (y0, y1) = (y_of(hi), y_of(v.max(lo)));
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            slot * 0.7,
            (y1 - y0).max(0.0)
        );
        let _ = writeln!(
            s,
            r#"<text class="bar-value" x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            x + slot * 0.35,
            y1 + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text class="x-tick" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - BOTTOM + 18.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

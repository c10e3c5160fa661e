//! CSV training logs to SVG line charts, one file per metric.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::run::{read_manifest, MANIFEST_FILE};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A parsed log: header and cells (`None` for empty cells).
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl LogTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a log; non-numeric cells (modes, order) are kept as `None`.
pub fn read_log(path: &Path) -> Result<LogTable> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("parsing {}", path.display()))?;
        rows.push(record.iter().map(|c| c.parse::<f64>().ok()).collect());
    }
    Ok(LogTable { header, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference line `(y, label)`.
    pub bound: Option<(f64, String)>,
}

/// Data-to-pixel mapping of a chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let half = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - half, hi + half)
    }
}

impl Frame {
    pub fn for_chart(chart: &Chart) -> Self {
        let points = chart.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if let Some((b, _)) = chart.bound {
            y0 = y0.min(b);
            y1 = y1.max(b);
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        let (x_min, x_max) = if x1 > x0 { (x0, x1) } else { widen(x0, x1) };
        let (y_min, y_max) = widen(y0, y1);
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

pub fn render_svg(chart: &Chart) -> String {
    let f = Frame::for_chart(chart);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(&chart.title));
    let (x_lo, x_hi, y_lo, y_hi) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(s, r#"<g class="axes" stroke="black"><line x1="{x_lo}" y1="{y_hi}" x2="{x_hi}" y2="{y_hi}"/><line x1="{x_lo}" y1="{y_lo}" x2="{x_lo}" y2="{y_hi}"/></g>"#);
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x_min + t * (f.x_max - f.x_min);
        let yv = f.y_min + t * (f.y_max - f.y_min);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(s, r#"<line x1="{px}" y1="{y_hi}" x2="{px}" y2="{}" stroke="black"/><text x="{px}" y="{}" text-anchor="middle">{}</text>"#, y_hi + 4.0, y_hi + 18.0, tick_label(xv));
        let _ = writeln!(s, r##"<line x1="{}" y1="{py}" x2="{x_lo}" y2="{py}" stroke="black"/><line x1="{x_lo}" y1="{py}" x2="{x_hi}" y2="{py}" stroke="#e0e0e0"/><text x="{}" y="{}" text-anchor="end">{}</text>"##, x_lo - 4.0, x_lo - 6.0, py + 4.0, tick_label(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x_lo + x_hi) / 2.0, HEIGHT - 10.0, escape(&chart.x_label));
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, (y_lo + y_hi) / 2.0, (y_lo + y_hi) / 2.0, escape(&chart.y_label));
    if let Some((b, label)) = &chart.bound {
        let py = f.py(*b);
        let _ = writeln!(s, r#"<line class="bound" x1="{x_lo}" y1="{py}" x2="{x_hi}" y2="{py}" stroke="black" stroke-dasharray="6 4" data-value="{b}"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x_hi + 6.0, py + 4.0, escape(label));
    }
    for (k, series) in chart.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let label = escape(&series.label);
        let _ = writeln!(s, r#"<g class="series" data-label="{label}" fill="{color}" stroke="{color}">"#);
        if series.points.len() > 1 {
            let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        } else {
            for &(x, y) in &series.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, f.px(x), f.py(y));
            }
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke-width="2"/><text x="{}" y="{}" stroke="none">{label}</text>"#, x_hi + 8.0, x_hi + 28.0, x_hi + 32.0, ly + 4.0);
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Metrics plotted from a log: rewards and discounted costs, train and eval.
fn plotted(name: &str) -> bool {
    matches!(name, "train_reward" | "eval_reward")
        || ((name.starts_with("train_cost_") || name.starts_with("eval_cost_")) && !name.contains("undiscounted"))
}

/// Bound of a cost column `..._cost_<i>_<j>` from a manifest's resolved bounds.
fn column_bound(name: &str, bounds: &[Vec<Option<f64>>]) -> Option<f64> {
    let mut parts = name.rsplit('_');
    let j: usize = parts.next()?.parse().ok()?;
    let i: usize = parts.next()?.parse().ok()?;
    bounds.get(i)?.get(j).copied().flatten()
}

/// Writes one SVG per metric for the given logs into `out_dir`. Logs must
/// share a header. Cost charts draw `bound` when given, otherwise the bound in
/// the manifest next to the first log, if any.
pub fn plot_logs(logs: &[PathBuf], labels: &[String], bound: Option<f64>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if logs.is_empty() {
        bail!("no logs given");
    }
    if !labels.is_empty() && labels.len() != logs.len() {
        bail!("{} labels for {} logs", labels.len(), logs.len());
    }
    let tables = logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
    for (path, t) in logs.iter().zip(&tables).skip(1) {
        if t.header != tables[0].header {
            bail!("schema mismatch: {} does not share the header of {}", path.display(), logs[0].display());
        }
    }
    let header = &tables[0].header;
    let Some(x_col) = tables[0].column("iteration") else {
        bail!("{} has no iteration column", logs[0].display());
    };
    let manifest_bounds = logs[0]
        .parent()
        .map(|d| d.join(MANIFEST_FILE))
        .filter(|p| p.exists())
        .map(|p| read_manifest(&p))
        .transpose()?
        .map(|m| m.bounds);
    let names: Vec<String> = if labels.is_empty() {
        logs.iter()
            .map(|p| {
                p.parent()
                    .and_then(|d| d.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect()
    } else {
        labels.to_vec()
    };
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();
    for (col, name) in header.iter().enumerate().filter(|(_, n)| plotted(n)) {
        let series: Vec<Series> = tables
            .iter()
            .zip(&names)
            .map(|(t, label)| Series {
                label: label.clone(),
                points: t.rows.iter().filter_map(|r| Some((r[x_col]?, r[col]?))).collect(),
            })
            .collect();
        if series.iter().all(|s| s.points.is_empty()) {
            continue;
        }
        let is_cost = name.contains("_cost_");
        let bound = if is_cost {
            bound.or_else(|| manifest_bounds.as_ref().and_then(|b| column_bound(name, b)))
        } else {
            None
        };
        let chart = Chart {
            title: name.clone(),
            x_label: "iteration".into(),
            y_label: if is_cost { "discounted episode cost".into() } else { "episode reward".into() },
            series,
            bound: bound.map(|b| (b, format!("bound {b}"))),
        };
        let path = out_dir.join(format!("{name}.svg"));
        fs::write(&path, render_svg(&chart)).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

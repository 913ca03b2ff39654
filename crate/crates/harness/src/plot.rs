//! Self-contained SVG renderings of trajectory, sweep and ablation CSVs.
//! Output bytes depend only on the input bytes.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{HarnessError, Result};

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    LcsTrajectory,
    SweepHeatmap,
    AblationCurve,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::LcsTrajectory => "lcs_trajectory",
            PlotKind::SweepHeatmap => "sweep_heatmap",
            PlotKind::AblationCurve => "ablation_curve",
        }
    }

    pub fn required_columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::LcsTrajectory => &["t", "lcs"],
            PlotKind::SweepHeatmap => &["epsilon", "steps", "psnr_mean"],
            PlotKind::AblationCurve => &["k", "psnr_mean"],
        }
    }
}

impl FromStr for PlotKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcs_trajectory" => Ok(PlotKind::LcsTrajectory),
            "sweep_heatmap" => Ok(PlotKind::SweepHeatmap),
            "ablation_curve" => Ok(PlotKind::AblationCurve),
            other => Err(HarnessError::config(format!(
                "unknown plot kind {other:?} (lcs_trajectory, sweep_heatmap, ablation_curve)"
            ))),
        }
    }
}

/// Numeric table; unparsable cells become NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> std::result::Result<Table, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = match lines.next() {
            Some(h) => h.split(',').map(|c| c.trim().to_string()).collect(),
            None => return Err("missing header".into()),
        };
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let cells: Vec<f64> = l.split(',').map(|c| c.trim().parse::<f64>().unwrap_or(f64::NAN)).collect();
            if cells.len() != header.len() {
                return Err(format!("row {} has {} cells, header has {}", i + 1, cells.len(), header.len()));
            }
            rows.push(cells);
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn emit_plot(kind: PlotKind, csv: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv).map_err(HarnessError::io(csv))?;
    let table = Table::parse(&text).map_err(|reason| HarnessError::Csv { path: csv.to_path_buf(), reason })?;
    let svg = render(kind, &table).map_err(|reason| HarnessError::Csv { path: csv.to_path_buf(), reason })?;
    std::fs::write(out, svg).map_err(HarnessError::io(out))
}

pub fn render(kind: PlotKind, t: &Table) -> std::result::Result<String, String> {
    let missing: Vec<&str> = kind
        .required_columns()
        .iter()
        .copied()
        .filter(|c| !t.header.iter().any(|h| h == c))
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing columns for {}: {}", kind.as_str(), missing.join(", ")));
    }
    let col = |n: &str| t.column(n).unwrap_or_default();
    Ok(match kind {
        PlotKind::LcsTrajectory => line_plot("LCS trajectory", "step t", "LCS", &col("t"), &col("lcs"), None),
        PlotKind::AblationCurve => {
            let std = t.column("psnr_std");
            line_plot("Decay-factor ablation", "k", "target PSNR (dB)", &col("k"), &col("psnr_mean"), std.as_deref())
        }
        PlotKind::SweepHeatmap => heatmap(&col("epsilon"), &col("steps"), &col("psnr_mean")),
    })
}

fn f(v: f64) -> String {
    // Fixed precision keeps the output byte-stable.
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        f(W / 2.0),
        escape(title)
    );
    s
}

fn axes(s: &mut String, xl: &str, yl: &str, ranges: Option<((f64, f64), (f64, f64))>) {
    let (left, right, top, bottom) = (MARGIN_L, W - MARGIN_R, MARGIN_T, H - MARGIN_B);
    let _ = writeln!(
        s,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black" stroke-width="1"/>"#,
        f(left),
        f(top),
        f(left),
        f(bottom),
        f(right),
        f(bottom)
    );
    let txt = |s: &mut String, x: f64, y: f64, anchor: &str, t: &str| {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            f(x),
            f(y),
            escape(t)
        );
    };
    if let Some(((x0, x1), (y0, y1))) = ranges {
        txt(s, left, bottom + 16.0, "middle", &label(x0));
        txt(s, right, bottom + 16.0, "middle", &label(x1));
        txt(s, left - 6.0, bottom, "end", &label(y0));
        txt(s, left - 6.0, top + 4.0, "end", &label(y1));
    }
    txt(s, (left + right) / 2.0, H - 10.0, "middle", xl);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        f((top + bottom) / 2.0),
        f((top + bottom) / 2.0),
        escape(yl)
    );
}

fn line_plot(title: &str, xl: &str, yl: &str, xs: &[f64], ys: &[f64], err: Option<&[f64]>) -> String {
    let pts: Vec<(f64, f64, f64)> = xs
        .iter()
        .zip(ys)
        .enumerate()
        .filter(|(_, (x, y))| x.is_finite() && y.is_finite())
        .map(|(i, (&x, &y))| (x, y, err.map_or(0.0, |e| if e[i].is_finite() { e[i] } else { 0.0 })))
        .collect();
    let xr = range(pts.iter().map(|p| p.0));
    let yr = range(pts.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let mut s = header(title);
    axes(&mut s, xl, yl, Some((xr, yr)));
    let px = |x: f64| MARGIN_L + (x - xr.0) / (xr.1 - xr.0) * (W - MARGIN_L - MARGIN_R);
    let py = |y: f64| H - MARGIN_B - (y - yr.0) / (yr.1 - yr.0) * (H - MARGIN_T - MARGIN_B);
    if pts.len() > 1 {
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let _ = write!(d, "{}{} {} ", if i == 0 { "M" } else { "L" }, f(px(p.0)), f(py(p.1)));
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#, d.trim_end());
    }
    // Dense trajectories get a line only; sparse series also get markers.
    if pts.len() <= 64 {
        for p in &pts {
            if p.2 > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<path d="M{} {} L{} {}" stroke="gray" stroke-width="1"/>"#,
                    f(px(p.0)),
                    f(py(p.1 - p.2)),
                    f(px(p.0)),
                    f(py(p.1 + p.2))
                );
            }
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="3" fill="steelblue"/>"#, f(px(p.0)), f(py(p.1)));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn distinct(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn heatmap(eps: &[f64], steps: &[f64], psnr: &[f64]) -> String {
    let rows = distinct(eps);
    let cols = distinct(steps);
    let (lo, hi) = range(psnr.iter().copied());
    let mut s = header("Target PSNR over budget and iterations");
    axes(&mut s, "steps T", "epsilon", None);
    let (left, right, top, bottom) = (MARGIN_L, W - MARGIN_R, MARGIN_T, H - MARGIN_B);
    if !rows.is_empty() && !cols.is_empty() {
        let cw = (right - left) / cols.len() as f64;
        let ch = (bottom - top) / rows.len() as f64;
        for (&e, (&t, &p)) in eps.iter().zip(steps.iter().zip(psnr)) {
            let (Some(r), Some(c)) = (rows.iter().position(|&v| v == e), cols.iter().position(|&v| v == t)) else {
                continue;
            };
            let u = if p.is_finite() { (p - lo) / (hi - lo) } else { 0.0 };
            let (red, green, blue) = (
                (68.0 + u * (253.0 - 68.0)).round() as u8,
                (1.0 + u * (231.0 - 1.0)).round() as u8,
                (84.0 + u * (37.0 - 84.0)).round() as u8,
            );
            let (x, y) = (left + c as f64 * cw, bottom - (r + 1) as f64 * ch);
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#{red:02x}{green:02x}{blue:02x}" stroke="white"/>"##,
                f(x),
                f(y),
                f(cw),
                f(ch)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle" fill="{}">{}</text>"#,
                f(x + cw / 2.0),
                f(y + ch / 2.0 + 4.0),
                if u > 0.5 { "black" } else { "white" },
                if p.is_finite() { format!("{p:.2}") } else { "nan".into() }
            );
        }
        for (c, &t) in cols.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                f(left + (c as f64 + 0.5) * cw),
                f(bottom + 30.0),
                label(t)
            );
        }
        for (r, &e) in rows.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                f(left - 6.0),
                f(bottom - (r as f64 + 0.5) * ch + 4.0),
                label(e)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

//! SVG charts of metric reports and trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Pose6;
use crate::metrics::{MetricReport, ReportRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Padded data range; a degenerate range is widened around its value.
fn range(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("cannot plot non-finite value {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::Evaluation("nothing to plot".into()));
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    Ok((lo - pad, hi + pad))
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <title>{t}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{cx}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{t}</text>\n",
        t = escape(title),
        cx = WIDTH / 2.0,
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        "<path d=\"M {x0} {y1} L {x0} {y0} L {x1} {y0}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>"
    );
    for i in 0..=TICKS {
        let v = f.y.0 + (f.y.1 - f.y.0) * i as f64 / TICKS as f64;
        let y = f.py(v);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            y + 3.0,
            tick_label(v)
        );
        if x_ticks {
            let u = f.x.0 + (f.x.1 - f.x.0) * i as f64 / TICKS as f64;
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                f.px(u),
                y0 + 14.0,
                tick_label(u)
            );
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let x = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            escape(name)
        );
    }
}

/// Polylines with point markers, one per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let f = Frame {
        x: range(pts().map(|p| p.0))?,
        y: range(pts().map(|p| p.1))?,
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label, true);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", f.px(x), f.py(y));
        }
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// One bar per label, starting from zero.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<String> {
    let (_, hi) = range(bars.iter().map(|b| b.1).chain([0.0]))?;
    let f = Frame {
        x: (0.0, bars.len() as f64),
        y: (0.0, hi),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "", y_label, false);
    let slot = (WIDTH - LEFT - RIGHT) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let (x, y, base) = (f.px(i as f64) + 0.15 * slot, f.py(v.max(0.0)), f.py(0.0));
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{}: {v}</title></rect>",
            0.7 * slot,
            base - y,
            PALETTE[i % PALETTE.len()],
            escape(label)
        );
    }
    legend(&mut out, &bars.iter().map(|b| b.0.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Top-down (x against z) view of a ground-truth and a predicted path.
pub fn trajectory_overlay(title: &str, gt: &[Pose6], pred: &[Pose6]) -> Result<String> {
    let xz = |t: &[Pose6]| t.iter().map(|p| (p.tx, p.tz)).collect::<Vec<_>>();
    line_chart(
        title,
        "x",
        "z",
        &[
            Series {
                name: "ground truth".into(),
                points: xz(gt),
            },
            Series {
                name: "predicted".into(),
                points: xz(pred),
            },
        ],
    )
}

fn row_label(r: &ReportRow) -> String {
    let c = &r.condition;
    let mut parts = vec![c.model.clone()];
    parts.extend(c.level.map(|l| format!("L{l}")));
    parts.extend(c.profile.clone());
    parts.extend(c.corruption.clone());
    parts.extend(c.severity.map(|s| format!("s{s}")));
    parts.extend(c.sequence.clone());
    parts.join(" ")
}

fn write(dir: &Path, name: &str, svg: String, out: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    out.push(p);
    Ok(())
}

/// Writes the charts that fit `report` into `out_dir`: depth AbsRel per
/// row, against severity per corruption kind with a per-kind mean bar
/// chart when the report has severities, and against vibration level per
/// model when it spans several levels.
pub fn plot_report(report: &MetricReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Evaluation("cannot plot an empty report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let bars: Vec<(String, f64)> = report.rows.iter().map(|r| (row_label(r), r.depth.abs_rel)).collect();
    write(out_dir, "rows_abs_rel.svg", bar_chart("Depth AbsRel", "AbsRel", &bars)?, &mut files)?;

    let mut by_kind: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &report.rows {
        if let (Some(k), Some(s)) = (&r.condition.corruption, r.condition.severity) {
            by_kind.entry(format!("{} {k}", r.condition.model)).or_default().push((f64::from(s), r.depth.abs_rel));
        }
    }
    if !by_kind.is_empty() {
        let series: Vec<Series> = by_kind
            .iter()
            .map(|(name, pts)| {
                let mut points = pts.clone();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    name: name.clone(),
                    points,
                }
            })
            .collect();
        write(
            out_dir,
            "severity_abs_rel.svg",
            line_chart("Depth AbsRel against corruption severity", "severity", "AbsRel", &series)?,
            &mut files,
        )?;
        let means: Vec<(String, f64)> = by_kind
            .iter()
            .map(|(k, pts)| (k.clone(), pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64))
            .collect();
        write(
            out_dir,
            "corruption_abs_rel.svg",
            bar_chart("Mean depth AbsRel per corruption", "AbsRel", &means)?,
            &mut files,
        )?;
    }

    let mut by_model: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in report.rows.iter().filter(|r| r.condition.corruption.is_none()) {
        if let Some(l) = r.condition.level {
            let key = match &r.condition.profile {
                Some(p) => format!("{} {p}", r.condition.model),
                None => r.condition.model.clone(),
            };
            by_model.entry(key).or_default().push((f64::from(l), r.depth.abs_rel));
        }
    }
    if by_model.values().any(|v| v.len() > 1) {
        let series: Vec<Series> = by_model
            .into_iter()
            .map(|(name, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series { name, points }
            })
            .collect();
        write(
            out_dir,
            "level_abs_rel.svg",
            line_chart("Depth AbsRel against vibration level", "level", "AbsRel", &series)?,
            &mut files,
        )?;
    }
    Ok(files)
}

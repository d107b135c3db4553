//! CSV tables and standalone SVG line plots for experiment curves.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub lambda: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

/// One figure: fixed-`λ` curves over a sweep variable, plus an optional
/// tuned envelope.
#[derive(Clone, Debug, Serialize)]
pub struct Panel {
    /// Short key used for file names.
    pub name: String,
    pub title: String,
    /// Column name of the sweep variable.
    pub sweep: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub curves: Vec<Curve>,
    pub envelope: Option<Curve>,
}

fn create(path: &Path) -> Result<std::fs::File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes `sweep,lambda,mean,se`, one row per point, curves in order.
pub fn emit_csv(curves: &[Curve], sweep: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([sweep, "lambda", "mean", "se"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                p.x.to_string(),
                p.lambda.to_string(),
                p.mean.to_string(),
                p.se.to_string(),
            ])?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Rows of a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::param("csv", format!("bad field {i} in {}", path.display())))
        };
        out.push(CurvePoint {
            x: field(0)?,
            lambda: field(1)?,
            mean: field(2)?,
            se: field(3)?,
        });
    }
    Ok(out)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { lo.abs() * 0.05 } else { 0.5 };
            lo -= pad;
            hi += pad;
        }
        let pad = (hi - lo) * 0.04;
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    /// Position in `[0, 1]`, or `None` for values the axis cannot show.
    fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    /// Tick values in data coordinates.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let step = ((b - a) / 6 + 1).max(1);
            return (a..=b)
                .step_by(step as usize)
                .map(|e| 10f64.powi(e))
                .collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * step {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Standalone SVG with one polyline per curve and a dashed envelope line.
pub fn render_svg(panel: &Panel) -> String {
    let all: Vec<&Curve> = panel.curves.iter().chain(panel.envelope.iter()).collect();
    let xs = Axis::fit(
        all.iter().flat_map(|c| c.points.iter().map(|p| p.x)),
        panel.log_x,
    );
    let ys = Axis::fit(
        all.iter().flat_map(|c| c.points.iter().map(|p| p.mean)),
        panel.log_y,
    );
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |u: f64| LEFT + u * pw;
    let py = |u: f64| TOP + (1.0 - u) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for t in xs.ticks() {
        if let Some(u) = xs.unit(t) {
            let x = px(u);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#333"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 19.0,
                tick_label(t)
            );
        }
    }
    for t in ys.ticks() {
        if let Some(u) = ys.unit(t) {
            let y = py(u);
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                tick_label(t)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&panel.y_label)
    );

    for (k, c) in all.iter().enumerate() {
        let is_env = panel.envelope.is_some() && k == all.len() - 1;
        let colour = if is_env {
            "#000000"
        } else {
            PALETTE[k % PALETTE.len()]
        };
        let pts: Vec<String> = c
            .points
            .iter()
            .filter_map(|p| Some((xs.unit(p.x)?, ys.unit(p.mean)?)))
            .map(|(u, v)| format!("{:.2},{:.2}", px(u), py(v.clamp(-0.05, 1.05))))
            .collect();
        let dash = if is_env {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.6"{dash} points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&c.label)
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg_plot(panel: &Panel, path: &Path) -> Result<()> {
    use std::io::Write;
    create(path)?
        .write_all(render_svg(panel).as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Largest rise between neighbouring points of a curve, judged against
/// twice the combined standard error of the pair.
#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityCheck {
    pub curve: String,
    pub pass: bool,
    /// Largest `mean[i+1] − mean[i]`, zero if the curve never rises.
    pub max_increase: f64,
    /// Largest of `rise − 2·SE` over adjacent pairs.
    pub worst_excess: f64,
    /// Sweep value where the worst pair ends.
    pub at: f64,
}

pub fn check_monotone(curve: &Curve, k: f64) -> MonotonicityCheck {
    let mut check = MonotonicityCheck {
        curve: curve.label.clone(),
        pass: true,
        max_increase: 0.0,
        worst_excess: f64::NEG_INFINITY,
        at: f64::NAN,
    };
    for w in curve.points.windows(2) {
        let rise = w[1].mean - w[0].mean;
        let excess = rise - k * w[0].se.hypot(w[1].se);
        check.max_increase = check.max_increase.max(rise);
        if excess > check.worst_excess {
            check.worst_excess = excess;
            check.at = w[1].x;
        }
        if !(excess <= 0.0) {
            check.pass = false;
        }
    }
    if curve.points.len() < 2 {
        check.worst_excess = 0.0;
    }
    check
}

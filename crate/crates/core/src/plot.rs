//! Standalone SVG line plots from metric and complexity CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{PlotSpec, YScale};
use crate::error::{Error, Result};

/// One polyline: `(x, mean y)` points sorted by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Read one CSV into series. Rows are grouped by the `method` column when
/// present; repeated `x` values (several seeds) are averaged. Non-finite
/// values are skipped, as are non-positive ones on a log axis.
pub fn read_series(text: &str, label: &str, x: &str, y: &str, yscale: YScale) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Io(format!("{label}: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("{label}: missing column `{name}`")))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let mi = headers.iter().position(|h| h == "method");
    let mut groups: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    let mut rows = 0usize;
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: n + 2, message: format!("{label}: {e}") })?;
        rows += 1;
        let num = |i: usize| -> Result<f64> {
            let v = rec.get(i).unwrap_or("");
            v.parse::<f64>().map_err(|_| Error::Parse { line: n + 2, message: format!("{label}: `{v}` is not a number") })
        };
        let (xv, yv) = (num(xi)?, num(yi)?);
        if !xv.is_finite() || !yv.is_finite() || (yscale == YScale::Log && yv <= 0.0) {
            continue;
        }
        let name = match mi {
            Some(i) => rec.get(i).unwrap_or("").to_string(),
            None => label.to_string(),
        };
        // Key by bit pattern in a total order so equal x values merge.
        let key = xv.to_bits() ^ if xv.is_sign_negative() { u64::MAX } else { 1 << 63 };
        let e = groups.entry(name).or_default().entry(key).or_insert((xv, 0.0, 0));
        e.1 += yv;
        e.2 += 1;
    }
    if rows == 0 {
        return Err(Error::InvalidArgument(format!("{label}: CSV has no data rows")));
    }
    Ok(groups
        .into_iter()
        .map(|(name, pts)| Series { name, points: pts.into_values().map(|(x, s, c)| (x, s / c as f64)).collect() })
        .collect())
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render series as an SVG document.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str, yscale: YScale, title: &str) -> Result<String> {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot: every value was skipped".into()));
    }
    let ty = |y: f64| if yscale == YScale::Log { y.log10() } else { y };
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(ty(p.1)), b.max(ty(p.1))));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !title.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    }
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, HEIGHT - MARGIN, HEIGHT - MARGIN + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 16.0, fmt_tick(t));
    }
    let yticks = match yscale {
        YScale::Linear => nice_ticks(y0, y1, 5),
        YScale::Log => (y0.floor() as i32..=y1.ceil() as i32).map(f64::from).filter(|e| *e >= y0 && *e <= y1).collect(),
    };
    for t in yticks {
        let v = if yscale == YScale::Log { 10f64.powf(t) } else { t };
        let y = sy(v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{MARGIN}" y2="{y:.2}" stroke="black"/>"#, MARGIN - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN - 6.0, y + 4.0, fmt_tick(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (n, s) in series.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let coords: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let ly = MARGIN + 14.0 + 16.0 * n as f64;
        let lx = WIDTH - MARGIN - 120.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Read every input in `spec` and render one SVG.
pub fn emit_plot(spec: &PlotSpec) -> Result<String> {
    let mut series = Vec::new();
    for (n, path) in spec.inputs.iter().enumerate() {
        let label = match spec.labels.get(n) {
            Some(l) => l.clone(),
            None => file_stem(path),
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        series.extend(read_series(&text, &label, &spec.x, &spec.y, spec.yscale)?);
    }
    render_svg(&series, &spec.x, &spec.y, spec.yscale, &spec.title)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

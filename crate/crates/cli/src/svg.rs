//! Log-log SVG plot of a fitted power series.

use std::fmt::Write;

use sascorr_core::powerfit::{DataSeries, ExponentFit, FitResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const CURVE_SAMPLES: usize = 200;
/// Slopes of the dashed reference lines.
pub const GUIDE_SLOPES: [i32; 4] = [-1, 1, 2, 3];

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, power: f64) -> f64 {
        LEFT + (power.log10() - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, value: f64) -> f64 {
        HEIGHT - BOTTOM - (value.log10() - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }

    fn contains(&self, power: f64, value: f64) -> bool {
        let (x, y) = (power.log10(), value.log10());
        value > 0.0 && x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Decade-padded log range of the positive values.
fn log_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let (mut a, mut b) = (lo.log10().floor(), hi.log10().ceil());
    if a == b {
        a -= 0.5;
        b += 0.5;
    }
    Some((a, b))
}

fn polyline(out: &mut String, points: &[(f64, f64)], style: &str) {
    if points.len() < 2 {
        return;
    }
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, pts.join(" "));
}

/// Data with error bars, the selected model, the power-law fit and guide
/// lines of slope -1, 1, 2 and 3 through the geometric centre of the data.
pub fn fit_plot(series: &DataSeries, model: &FitResult, exponent: Option<&ExponentFit>) -> String {
    let pts = &series.points;
    let (x0, x1) = log_range(pts.iter().map(|p| p.power_mw)).unwrap_or((-1.0, 1.0));
    let (y0, y1) = log_range(pts.iter().flat_map(|p| [p.value, p.value + p.sigma])).unwrap_or((-1.0, 1.0));
    let ax = Axes { x0, x1, y0, y1 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (pl, pr, pt, pb) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{pl}" y="{pt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        pr - pl,
        pb - pt
    );
    for d in (x0 as i32)..=(x1 as i32) {
        let x = ax.px(10f64.powi(d));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{pb}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, pb + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#, pb + 18.0);
    }
    for d in (y0.ceil() as i32)..=(y1.floor() as i32) {
        let y = ax.py(10f64.powi(d));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{pl}" y2="{y:.2}" stroke="black"/>"#, pl - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, pl - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">power (mW)</text>"#, (pl + pr) / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (pt + pb) / 2.0,
        (pt + pb) / 2.0,
        escape(&series.label)
    );

    let grid: Vec<f64> = (0..=CURVE_SAMPLES)
        .map(|i| 10f64.powf(x0 + (x1 - x0) * i as f64 / CURVE_SAMPLES as f64))
        .collect();
    let curve = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
        grid.iter()
            .filter_map(|&p| {
                let v = f(p);
                ax.contains(p, v).then(|| (ax.px(p), ax.py(v)))
            })
            .collect()
    };

    let positive: Vec<_> = pts.iter().filter(|p| p.value > 0.0).collect();
    if !positive.is_empty() {
        let n = positive.len() as f64;
        let cx = positive.iter().map(|p| p.power_mw.ln()).sum::<f64>() / n;
        let cy = positive.iter().map(|p| p.value.ln()).sum::<f64>() / n;
        for (i, slope) in GUIDE_SLOPES.iter().enumerate() {
            let line = curve(&|p: f64| (cy + *slope as f64 * (p.ln() - cx)).exp());
            polyline(&mut s, &line, r##"stroke="#888888" stroke-dasharray="6,4""##);
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" fill="#888888">slope {slope}</text>"##,
                pr + 10.0,
                pt + 75.0 + 16.0 * i as f64
            );
        }
    }

    let basis: Vec<String> = model.basis.iter().map(|e| e.to_string()).collect();
    polyline(&mut s, &curve(&|p| model.eval(p)), r##"stroke="#c0392b" stroke-width="2""##);
    let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" fill="#c0392b">basis {{{}}}</text>"##, pr + 10.0, pt + 20.0, basis.join(","));
    if let Some(e) = exponent {
        polyline(
            &mut s,
            &curve(&|p| (e.intercept + e.exponent * p.ln()).exp()),
            r##"stroke="#2471a3" stroke-dasharray="2,3" stroke-width="2""##,
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" fill="#2471a3">P^{:.3}</text>"##,
            pr + 10.0,
            pt + 40.0,
            e.exponent
        );
    }

    for p in pts.iter().filter(|p| ax.contains(p.power_mw, p.value)) {
        let x = ax.px(p.power_mw);
        let lo = (p.value - p.sigma).max(10f64.powf(y0));
        let hi = (p.value + p.sigma).min(10f64.powf(y1));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, ax.py(lo), ax.py(hi));
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="black"/>"#, ax.py(p.value));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

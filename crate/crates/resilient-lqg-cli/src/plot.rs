//! Minimal SVG line plots for the comparison figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;

use resilient_lqg::harness::Comparison;
use resilient_lqg::model::ValidatedScenario;
use resilient_lqg::{Matrix, Vector};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1b6ac9", "#d1495b", "#edae49", "#00798c", "#6a4c93", "#3d3d3d"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(series: &[Series], extra: &[(f64, f64)]) -> Self {
        let pts = series.iter().flat_map(|s| s.points.iter()).chain(extra).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !(x0 < x1) {
            x1 = x0 + 1.0;
        }
        if !(y0 < y1) {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        Self { x: (x0, x1), y: (y0 - pad, y1 + pad) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn tick(v: f64, span: f64) -> String {
    let digits = if span >= 100.0 { 0 } else if span >= 1.0 { 2 } else { 4 };
    format!("{v:.digits$}")
}

fn polyline(frame: &Frame, pts: &[(f64, f64)], color: &str, fill: Option<&str>) -> String {
    let stride = (pts.len() / MAX_POINTS).max(1);
    let coords: Vec<String> = pts
        .iter()
        .step_by(stride)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect();
    match fill {
        Some(f) => format!(r#"<polygon points="{}" fill="{f}" fill-opacity="0.25" stroke="{color}"/>"#, coords.join(" ")),
        None => format!(r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, coords.join(" ")),
    }
}

fn render(title: &str, xlabel: &str, ylabel: &str, series: &[Series], shapes: &[(Vec<(f64, f64)>, &str)]) -> String {
    let extra: Vec<(f64, f64)> = shapes.iter().flat_map(|(p, _)| p.iter().copied()).collect();
    let frame = Frame::fit(series, &extra);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, WIDTH / 2.0);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for i in 0..=4 {
        let fx = frame.x.0 + (frame.x.1 - frame.x.0) * i as f64 / 4.0;
        let fy = frame.y.0 + (frame.y.1 - frame.y.0) * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, frame.px(fx), b + 16.0, tick(fx, frame.x.1 - frame.x.0));
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 4.0, frame.py(fy) + 4.0, tick(fy, frame.y.1 - frame.y.0));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, WIDTH / 2.0, HEIGHT - 16.0);
    let _ = writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);
    for (pts, color) in shapes {
        let _ = writeln!(svg, "{}", polyline(&frame, pts, color, Some(color)));
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(svg, "{}", polyline(&frame, &s.points, color, None));
        let y = t + 16.0 + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, r - 170.0, r - 150.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, r - 145.0, y + 4.0, s.name);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Boundary of `(x - c)ᵀE(x - c) ≤ level` in the first two coordinates.
fn ellipse_outline(center: &Vector, shape: &Matrix, level: f64) -> Option<Vec<(f64, f64)>> {
    let e = shape.view((0, 0), (2, 2)).into_owned();
    let l = e.cholesky()?.l();
    let l_inv_t = l.transpose().try_inverse()?;
    let r = level.max(0.0).sqrt();
    Some(
        (0..=96)
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / 96.0;
                let z = Vector::from_vec(vec![r * th.cos(), r * th.sin()]);
                let p = &l_inv_t * z;
                (center[0] + p[0], center[1] + p[1])
            })
            .collect(),
    )
}

pub fn write_figures(dir: &Path, label: &str, sc: &ValidatedScenario, cmp: &Comparison) -> Result<()> {
    let over_time = |pick: fn(&resilient_lqg::harness::FigureSeries) -> &Vec<f64>| -> Vec<Series> {
        cmp.series
            .iter()
            .map(|s| Series { name: s.controller.clone(), points: pick(s).iter().enumerate().map(|(k, v)| (k as f64, *v)).collect() })
            .collect()
    };
    let err = over_time(|s| &s.tracking_error);
    fs::write(dir.join(format!("{label}_tracking_error.svg")), render("Tracking error", "step", "mean |x - r|", &err, &[]))?;
    let cost = over_time(|s| &s.ln_running_cost);
    fs::write(dir.join(format!("{label}_ln_cost.svg")), render("Running cost", "step", "mean ln J", &cost, &[]))?;

    if sc.n >= 2 {
        let traj: Vec<Series> = cmp
            .series
            .iter()
            .map(|s| Series { name: s.controller.clone(), points: s.trajectory.iter().map(|x| (x[0], x[1])).collect() })
            .collect();
        let mut shapes = Vec::new();
        for (region, color) in [(&sc.config().unsafe_region, "#d1495b"), (&sc.config().goal, "#2a9d8f")] {
            if let Some(e) = region.ellipsoid(sc.n)? {
                if let Some(outline) = ellipse_outline(&e.center, &e.shape, e.level) {
                    shapes.push((outline, color));
                }
            }
        }
        fs::write(dir.join(format!("{label}_trajectories.svg")), render("Trajectories (run 0)", "x1", "x2", &traj, &shapes))?;
    }
    Ok(())
}

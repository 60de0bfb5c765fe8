//! Tiny hand-rolled SVG charts for experiment outputs.
//!
//! Two chart kinds cover everything the harness emits: line charts for loss
//! curves and sweeps, bar charts for metric summaries. Files are plain SVG
//! 1.1 with no external references, and every chart embeds its data points
//! as an XML comment so numbers can be recovered from the plot file alone.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One polyline on a line chart.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round a tick value to a short label.
fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (v - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/><text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );
    s
}

fn axes(s: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    let _ = write!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * f64::from(i) / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * f64::from(i) / 4.0;
        let px = frame.x(fx);
        let py = frame.y(fy);
        let _ = write!(
            s,
            r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}" stroke="black"/><text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 18.0,
            tick_label(fx)
        );
        let _ = write!(
            s,
            r#"<line x1="{}" y1="{py}" x2="{x0}" y2="{py}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 8.0,
            py + 4.0,
            tick_label(fy)
        );
    }
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    );
    let _ = write!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, content).map_err(io_err(path))
}

/// Line chart over one or more series; axes auto-scale to the finite data.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .copied()
        .collect();
    if finite.is_empty() {
        return Err(Error::EmptySet("chart data"));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &finite {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    // A little headroom so lines do not sit on the frame.
    let pad = (y_max - y_min) * 0.05;
    let frame = Frame { x_min, x_max, y_min: y_min - pad, y_max: y_max + pad };

    let mut s = open_svg(title);
    axes(&mut s, &frame, x_label, y_label);
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: String = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", frame.x(*x), frame.y(*y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = write!(
            s,
            r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let ly = MARGIN_T + 14.0 * i as f64;
        let _ = write!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            WIDTH - MARGIN_R - 150.0,
            ly,
            WIDTH - MARGIN_R - 135.0,
            ly + 9.0,
            esc(&ser.label)
        );
    }
    let _ = write!(s, "<!-- data\n");
    for ser in series {
        let _ = write!(s, "{}:", ser.label.replace("--", "-"));
        for (x, y) in &ser.points {
            let _ = write!(s, " ({x},{y})");
        }
        let _ = write!(s, "\n");
    }
    let _ = write!(s, "-->");
    s.push_str("</svg>");
    write_file(path, &s)
}

/// Vertical bar chart; bars are labeled with their values.
pub fn bar_chart(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::EmptySet("chart data"));
    }
    let y_max = bars
        .iter()
        .map(|(_, v)| *v)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let frame = Frame { x_min: 0.0, x_max: bars.len() as f64, y_min: 0.0, y_max: y_max * 1.1 };
    let mut s = open_svg(title);
    axes(&mut s, &frame, "", y_label);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = MARGIN_L + slot * (i as f64 + 0.15);
        let bw = slot * 0.7;
        let y = frame.y(v.max(0.0));
        let hgt = (HEIGHT - MARGIN_B) - y;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{bw:.2}" height="{hgt:.2}" fill="{color}"/>"#
        );
        let cx = x + bw / 2.0;
        let _ = write!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{:.3}</text>"#,
            y - 5.0,
            v
        );
        let _ = write!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            HEIGHT - MARGIN_B + 16.0,
            esc(label)
        );
    }
    let _ = write!(s, "<!-- data\n");
    for (label, v) in bars {
        let _ = write!(s, "{}: {v}\n", label.replace("--", "-"));
    }
    let _ = write!(s, "-->");
    s.push_str("</svg>");
    write_file(path, &s)
}

//! Minimal SVG output for trajectory plots: a bounded plane with polyline
//! traces, target circles, and a start marker. No external plotting runtime.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 20.0;

/// Square plot over `[-half_width, half_width]^2`, y pointing up.
pub struct PlanePlot {
    half_width: f64,
    body: String,
}

impl PlanePlot {
    pub fn new(half_width: f64) -> Self {
        let mut p = PlanePlot {
            half_width,
            body: String::new(),
        };
        let _ = write!(
            p.body,
            "<rect x='{MARGIN}' y='{MARGIN}' width='{0}' height='{0}' fill='white' stroke='#444' stroke-width='1'/>",
            SIZE - 2.0 * MARGIN
        );
        p
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let scale = (SIZE - 2.0 * MARGIN) / (2.0 * self.half_width);
        (
            MARGIN + (x + self.half_width) * scale,
            MARGIN + (self.half_width - y) * scale,
        )
    }

    pub fn polyline(&mut self, points: &[[f64; 2]], color: &str, width: f64) {
        if points.len() < 2 {
            return;
        }
        let mut d = String::new();
        for p in points {
            let (x, y) = self.px(p[0], p[1]);
            let _ = write!(d, "{x:.2},{y:.2} ");
        }
        let _ = write!(
            self.body,
            "<polyline points='{}' fill='none' stroke='{color}' stroke-width='{width}'/>",
            d.trim_end()
        );
    }

    pub fn circle(&mut self, center: [f64; 2], radius_world: f64, color: &str, filled: bool) {
        let (x, y) = self.px(center[0], center[1]);
        let r = radius_world * (SIZE - 2.0 * MARGIN) / (2.0 * self.half_width);
        let fill = if filled { color } else { "none" };
        let _ = write!(
            self.body,
            "<circle cx='{x:.2}' cy='{y:.2}' r='{r:.2}' fill='{fill}' stroke='{color}' stroke-width='1.5'/>"
        );
    }

    pub fn cross(&mut self, center: [f64; 2], half_world: f64, color: &str) {
        let (x, y) = self.px(center[0], center[1]);
        let r = half_world * (SIZE - 2.0 * MARGIN) / (2.0 * self.half_width);
        let _ = write!(
            self.body,
            "<path d='M {x0:.2} {y:.2} L {x1:.2} {y:.2} M {x:.2} {y0:.2} L {x:.2} {y1:.2}' stroke='{color}' stroke-width='2'/>",
            x0 = x - r,
            x1 = x + r,
            y0 = y - r,
            y1 = y + r,
        );
    }

    pub fn label(&mut self, text: &str) {
        let _ = write!(
            self.body,
            "<text x='{MARGIN}' y='{}' font-family='monospace' font-size='12'>{text}</text>",
            SIZE - 4.0
        );
    }

    pub fn to_svg(&self) -> String {
        format!(
            "<svg xmlns='http://www.w3.org/2000/svg' width='{SIZE}' height='{SIZE}' viewBox='0 0 {SIZE} {SIZE}'>{}</svg>\n",
            self.body
        )
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_svg())
    }
}

/// A color per trace index, cycling through a small palette.
pub fn trace_color(i: usize) -> &'static str {
    const PALETTE: [&str; 8] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    ];
    PALETTE[i % PALETTE.len()]
}

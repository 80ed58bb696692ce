//! Minimal static SVG writer for the report figures.

use std::fmt::Write as _;

use base64::Engine as _;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: &str, dash: bool) {
        let d = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="1"{d}/>"#
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, color: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#);
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{color}"/>"#
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    pub fn png(&mut self, x: f64, y: f64, w: f64, h: f64, bytes: &[u8]) {
        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        let _ = writeln!(
            self.body,
            r#"<image x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" style="image-rendering:pixelated" href="data:image/png;base64,{b64}"/>"#
        );
    }

    /// Serialize with `metadata` (JSON) embedded in a `<metadata>` element.
    pub fn finish(self, metadata: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<metadata>{}</metadata>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            esc(metadata),
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Axis-aligned plotting area with a data-to-pixel mapping.
#[derive(Debug, Clone, Copy)]
pub struct Panel {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub xr: (f64, f64),
    pub yr: (f64, f64),
}

impl Panel {
    pub fn px(&self, v: f64) -> f64 {
        let span = (self.xr.1 - self.xr.0).max(1e-12);
        self.x + (v - self.xr.0) / span * self.w
    }

    pub fn py(&self, v: f64) -> f64 {
        let span = (self.yr.1 - self.yr.0).max(1e-12);
        self.y + self.h - (v - self.yr.0) / span * self.h
    }

    pub fn frame(&self, svg: &mut Svg, title: &str) {
        let (x0, y0, x1, y1) = (self.x, self.y, self.x + self.w, self.y + self.h);
        svg.line(x0, y1, x1, y1, "black", false);
        svg.line(x0, y0, x0, y1, "black", false);
        svg.text((x0 + x1) / 2.0, y0 - 4.0, 10.0, "middle", title);
        svg.text(x0 - 3.0, y1, 8.0, "end", &format!("{:.2}", self.yr.0));
        svg.text(x0 - 3.0, y0 + 8.0, 8.0, "end", &format!("{:.2}", self.yr.1));
        svg.text(x0, y1 + 10.0, 8.0, "middle", &format!("{}", self.xr.0));
        svg.text(x1, y1 + 10.0, 8.0, "middle", &format!("{}", self.xr.1));
    }
}

/// Data range padded by 5% on each side.
pub fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

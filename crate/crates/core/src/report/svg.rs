// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal deterministic SVG line and bar charts.

use std::fmt::Write;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Fixed-precision coordinate.
fn c(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Compact tick label.
pub fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="1"/>"#,
            c(x1),
            c(y1),
            c(x2),
            c(y2)
        );
    }

    pub fn segment(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dashed: bool) {
        let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
            c(x1),
            c(y1),
            c(x2),
            c(y2)
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, dashed: bool, class: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{},{}", c(*x), c(*y))).collect();
        let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline class="{}" points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
            escape(class),
            pts.join(" ")
        );
        for (x, y) in points {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{}" cy="{}" r="2" fill="{stroke}"/>"#,
                c(*x),
                c(*y)
            );
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
            c(x),
            c(y),
            c(w.max(0.0)),
            c(h.max(0.0))
        );
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            c(x),
            c(y),
            escape(s)
        );
    }

    pub fn vertical_text(&mut self, x: f64, y: f64, size: u32, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{0}" y="{1}" text-anchor="middle" font-size="{size}" transform="rotate(-90 {0} {1})">{2}</text>"#,
            c(x),
            c(y),
            escape(s)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Maps data coordinates into a pixel rectangle.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

/// Widens a degenerate range and pads it slightly.
pub fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - d, hi + d);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

pub fn range_of<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

impl Frame {
    pub fn x(&self, v: f64) -> f64 {
        let (a, b) = self.x_range;
        self.left + (v - a) / (b - a) * self.width
    }

    pub fn y(&self, v: f64) -> f64 {
        let (a, b) = self.y_range;
        self.top + self.height - (v - a) / (b - a) * self.height
    }

    pub fn with_y(&self, y_range: (f64, f64)) -> Self {
        Self { y_range, ..*self }
    }

    fn ticks(range: (f64, f64), n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / n as f64)
            .collect()
    }

    /// Box, x ticks at integer positions and left-axis ticks.
    pub fn axes(&self, svg: &mut Svg, x_title: &str, y_title: &str, integer_x: bool) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.width, self.top + self.height);
        for (x1, y1, x2, y2) in [(l, b, r, b), (l, t, l, b), (r, t, r, b), (l, t, r, t)] {
            svg.line(x1, y1, x2, y2, "#333333");
        }
        let xs: Vec<f64> = if integer_x {
            let (a, z) = (self.x_range.0.ceil() as i64, self.x_range.1.floor() as i64);
            let step = ((z - a) / 10).max(1);
            (a..=z).step_by(step as usize).map(|v| v as f64).collect()
        } else {
            Self::ticks(self.x_range, 5)
        };
        for v in xs {
            let x = self.x(v);
            svg.line(x, b, x, b + 4.0, "#333333");
            svg.text(x, b + 16.0, "middle", 10, &label(v));
        }
        for v in Self::ticks(self.y_range, 5) {
            let y = self.y(v);
            svg.line(l - 4.0, y, l, y, "#333333");
            svg.text(l - 6.0, y + 3.0, "end", 10, &label(v));
        }
        svg.text(l + self.width / 2.0, b + 32.0, "middle", 12, x_title);
        svg.vertical_text(l - 42.0, t + self.height / 2.0, 12, y_title);
    }

    /// Ticks and title on the right edge for a second y scale.
    pub fn right_axis(&self, svg: &mut Svg, range: (f64, f64), title: &str) {
        let other = self.with_y(range);
        let r = self.left + self.width;
        for v in Self::ticks(range, 5) {
            let y = other.y(v);
            svg.line(r, y, r + 4.0, y, "#333333");
            svg.text(r + 6.0, y + 3.0, "start", 10, &label(v));
        }
        svg.vertical_text(r + 48.0, self.top + self.height / 2.0, 12, title);
    }

    pub fn legend(&self, svg: &mut Svg, entries: &[(String, &str, bool)]) {
        for (i, (name, color, dashed)) in entries.iter().enumerate() {
            let y = self.top + 12.0 + 14.0 * i as f64;
            let x = self.left + 8.0;
            svg.segment(x, y - 4.0, x + 18.0, y - 4.0, color, *dashed);
            svg.text(x + 22.0, y, "start", 10, name);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(label(0.5), "0.5");
        assert_eq!(label(2.0), "2");
        assert_eq!(label(123456.0), "1.23e5");
        assert_eq!(label(-0.0001), "-1.00e-4");
        assert_eq!(label(0.0), "0");
    }

    #[test]
    fn frame_maps_corners() {
        let f = Frame {
            left: 10.0,
            top: 20.0,
            width: 100.0,
            height: 50.0,
            x_range: (0.0, 4.0),
            y_range: (0.0, 1.0),
        };
        assert_eq!((f.x(0.0), f.y(0.0)), (10.0, 70.0));
        assert_eq!((f.x(4.0), f.y(1.0)), (110.0, 20.0));
        assert_eq!(padded(2.0, 2.0), (1.8, 2.2));
    }

    #[test]
    fn escapes_text() {
        let mut s = Svg::new(10.0, 10.0);
        s.text(0.0, 0.0, "start", 10, "a<b & \"c\"");
        assert!(s.finish().contains("a&lt;b &amp; &quot;c&quot;"));
    }
}

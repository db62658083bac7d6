//! Minimal SVG writing helpers: self-contained documents, no external references.

use std::fmt::Write as _;

pub struct SvgDoc {
    width: f64,
    height: f64,
    body: String,
}

impl SvgDoc {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn raw(&mut self, element: &str) {
        self.body.push_str(element);
        self.body.push('\n');
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.raw(&format!(r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#));
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, width: f64, extra: &str) {
        self.raw(&format!(
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="{width:.3}"{extra}/>"#,
            a.0, a.1, b.0, b.1
        ));
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64, extra: &str) {
        self.raw(&format!(
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width:.3}"{extra}/>"#,
            points_attr(points)
        ));
    }

    pub fn polygon(&mut self, points: &[(f64, f64)], fill: &str, extra: &str) {
        self.raw(&format!(r#"<polygon points="{}" fill="{fill}"{extra}/>"#, points_attr(points)));
    }

    pub fn circle(&mut self, c: (f64, f64), r: f64, stroke: &str, width: f64, extra: &str) {
        self.raw(&format!(
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="none" stroke="{stroke}" stroke-width="{width:.3}"{extra}/>"#,
            c.0, c.1
        ));
    }

    pub fn text(&mut self, at: (f64, f64), size: f64, anchor: &str, content: &str) {
        self.raw(&format!(
            r#"<text x="{:.2}" y="{:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            at.0,
            at.1,
            escape(content)
        ));
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn points_attr(points: &[(f64, f64)]) -> String {
    let mut s = String::with_capacity(points.len() * 16);
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:.2},{y:.2}").expect("write to string");
    }
    s
}

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

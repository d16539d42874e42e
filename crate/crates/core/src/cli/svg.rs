//! Minimal SVG writers for contours, deformation paths and label panels.

use std::fmt::Write;

use crate::geometry::Point2;

pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn closed_path(points: &[Point2]) -> String {
    let mut d = String::new();
    for (i, p) in points.iter().enumerate() {
        let _ = write!(d, "{}{:.3} {:.3} ", if i == 0 { "M" } else { "L" }, p.x, p.y);
    }
    d.push('Z');
    d
}

pub struct Stage<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: &'a [Point2],
}

pub struct Figure {
    pub width: f64,
    pub height: f64,
    pub scale: f64,
    pub metadata: String,
    body: String,
}

impl Figure {
    pub fn new(width: f64, height: f64, scale: f64, metadata: &serde_json::Value) -> Self {
        Self { width, height, scale, metadata: metadata.to_string(), body: String::new() }
    }

    pub fn ground_truth(&mut self, polygon: &[Point2]) {
        let _ = writeln!(
            self.body,
            "<g class=\"gt\" id=\"gt\" fill=\"none\" stroke=\"#000000\" stroke-width=\"0.6\"><path d=\"{}\"/></g>",
            closed_path(polygon)
        );
    }

    pub fn stage(&mut self, s: &Stage) {
        let _ = writeln!(
            self.body,
            "<g class=\"stage\" id=\"stage-{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.5\"><path d=\"{}\"/></g>",
            s.name,
            escape_xml(s.color),
            closed_path(s.points)
        );
    }

    /// Segments from each vertex of `from` to the same vertex of `to`;
    /// zero-length segments are left out.
    pub fn paths(&mut self, from: &Stage, to: &Stage) {
        let mut lines = String::new();
        for (a, b) in from.points.iter().zip(to.points) {
            if a == b {
                continue;
            }
            let _ = write!(
                lines,
                "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\"/>",
                a.x, a.y, b.x, b.y
            );
        }
        let _ = writeln!(
            self.body,
            "<g class=\"deformation\" id=\"paths-{}-{}\" stroke=\"{}\" stroke-width=\"0.3\">{lines}</g>",
            from.name,
            to.name,
            escape_xml(to.color)
        );
    }

    pub fn dots(&mut self, class: &str, points: &[Point2], color: &str, r: f64) {
        let mut s = String::new();
        for p in points {
            let _ = write!(s, "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{r}\"/>", p.x, p.y);
        }
        let _ = writeln!(self.body, "<g class=\"{class}\" fill=\"{}\">{s}</g>", escape_xml(color));
    }

    pub fn rays(&mut self, center: Point2, ends: &[Point2], color: &str) {
        let mut s = String::new();
        for e in ends {
            let _ = write!(s, "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\"/>", center.x, center.y, e.x, e.y);
        }
        let _ = writeln!(self.body, "<g class=\"rays\" stroke=\"{}\" stroke-width=\"0.3\">{s}</g>", escape_xml(color));
    }

    /// Wraps following content in a translated group; close with `end_panel`.
    pub fn begin_panel(&mut self, id: &str, dx: f64, dy: f64, title: &str) {
        let _ = writeln!(self.body, "<g class=\"panel\" id=\"{}\" transform=\"translate({dx} {dy})\">", escape_xml(id));
        let _ = writeln!(self.body, "<text x=\"2\" y=\"8\" font-size=\"6\">{}</text>", escape_xml(title));
    }

    pub fn end_panel(&mut self) {
        self.body.push_str("</g>\n");
    }

    pub fn finish(self) -> String {
        let (w, h) = (self.width, self.height);
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {w} {h}\">\n\
             <metadata>{}</metadata>\n\
             <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n{}</svg>\n",
            w * self.scale,
            h * self.scale,
            escape_xml(&self.metadata),
            self.body
        )
    }
}

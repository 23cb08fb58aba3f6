//! Minimal SVG 1.1 figures: axes with ticks, polylines, point markers and
//! shaded vertical bands.

use std::fmt::Write;

pub struct Figure {
    width: f64,
    height: f64,
    margin: f64,
    x: (f64, f64),
    y: (f64, f64),
    body: String,
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    let r = (v * 1e3).round() / 1e3;
    // Avoid printing "-0".
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

impl Figure {
    pub fn new(width: f64, height: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Figure {
            width,
            height,
            margin: 60.0,
            x: padded(x_range.0, x_range.1),
            y: padded(y_range.0, y_range.1),
            body: String::new(),
        }
    }

    fn sx(&self, x: f64) -> f64 {
        self.margin + (x - self.x.0) / (self.x.1 - self.x.0) * (self.width - 2.0 * self.margin)
    }

    fn sy(&self, y: f64) -> f64 {
        self.height - self.margin - (y - self.y.0) / (self.y.1 - self.y.0) * (self.height - 2.0 * self.margin)
    }

    pub fn band(&mut self, x_lo: f64, x_hi: f64, fill: &str, opacity: f64) {
        let (a, b) = (self.sx(x_lo), self.sx(x_hi));
        let (top, bottom) = (self.sy(self.y.1), self.sy(self.y.0));
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            a.min(b),
            (b - a).abs().max(1.0),
            bottom - top
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    pub fn points(&mut self, pts: &[(f64, f64)], fill: &str, radius: f64) {
        for &(x, y) in pts {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{fill}"/>"#,
                self.sx(x),
                self.sy(y)
            );
        }
    }

    pub fn text(&mut self, x: f64, y: f64, label: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
            self.sx(x),
            self.sy(y),
            escape(label)
        );
    }

    pub fn axes(&mut self, x_label: &str, y_label: &str, ticks: usize) {
        let (x0, y0) = (self.sx(self.x.0), self.sy(self.y.0));
        let (x1, y1) = (self.sx(self.x.1), self.sy(self.y.1));
        let _ = writeln!(
            self.body,
            r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
        );
        for k in 0..=ticks {
            let t = k as f64 / ticks as f64;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let px = self.sx(xv);
            let _ = writeln!(
                self.body,
                r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                tick_label(xv)
            );
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let py = self.sy(yv);
            let _ = writeln!(
                self.body,
                r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            0.5 * (x0 + x1),
            self.height - 15.0,
            escape(x_label)
        );
        let _ = writeln!(
            self.body,
            r#"<text x="15" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
            0.5 * (y0 + y1),
            0.5 * (y0 + y1),
            escape(y_label)
        );
    }

    pub fn render(&self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let mut f = Figure::new(400.0, 300.0, (-1.0, 1.0), (0.0, 2.0));
        f.band(0.0, 0.1, "gray", 0.3);
        f.polyline(&[(-1.0, 0.0), (0.0, 1.0), (1.0, 2.0)], "blue");
        f.points(&[(0.5, 0.5)], "red", 3.0);
        f.axes("rho", "sup |u|", 4);
        f.text(0.0, 1.0, "a < b");
        let s = f.render();
        assert!(s.starts_with("<?xml") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("<polyline") && s.contains("a &lt; b"));
        assert!(!s.contains("NaN"));
    }

    #[test]
    fn degenerate_range_is_padded() {
        let f = Figure::new(100.0, 100.0, (1.0, 1.0), (0.0, 0.0));
        assert!(f.sx(1.0).is_finite() && f.sy(0.0).is_finite());
    }

    #[test]
    fn tick_labels_are_short() {
        assert_eq!(tick_label(-0.0001), "0");
        assert_eq!(tick_label(2.5), "2.5");
    }
}

//! Plain-text artifact writers: SVG scenes and PGM montages.

use crate::envs::Frame;
use std::fmt::Write as _;

/// Minimal SVG document builder.
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg { width, height, body: String::new() }
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"  <circle cx="{cx:.3}" cy="{cy:.3}" r="{r:.3}" fill="{fill}"/>"#
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"  <line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="{stroke}" stroke-width="{width:.3}"/>"#
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"  <text x="{x:.3}" y="{y:.3}" font-size="{size:.3}" font-family="monospace">{content}</text>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64, closed: bool) {
        if points.is_empty() {
            return;
        }
        let mut pts = String::new();
        for (x, y) in points {
            let _ = write!(pts, "{x:.3},{y:.3} ");
        }
        if closed {
            let _ = write!(pts, "{:.3},{:.3}", points[0].0, points[0].1);
        }
        let _ = writeln!(
            self.body,
            r#"  <polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width:.3}"/>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// Tile per-node mean frames into one grid image (P5 PGM). Empty nodes stay
/// black; one-pixel separators between cells.
pub fn montage_pgm(cells: &[Option<Frame>], grid_h: usize, grid_w: usize) -> Vec<u8> {
    let (fh, fw) = cells
        .iter()
        .flatten()
        .next()
        .map(|f| (f.height, f.width))
        .unwrap_or((8, 8));
    let out_h = grid_h * (fh + 1) + 1;
    let out_w = grid_w * (fw + 1) + 1;
    let mut pixels = vec![32u8; out_h * out_w];
    for (i, cell) in cells.iter().enumerate() {
        let (gr, gc) = (i / grid_w, i % grid_w);
        let oy = gr * (fh + 1) + 1;
        let ox = gc * (fw + 1) + 1;
        if let Some(f) = cell {
            for y in 0..fh {
                for x in 0..fw {
                    let mut v = 0.0f32;
                    for c in 0..f.channels {
                        v += f.pixels[(c * f.height + y) * f.width + x];
                    }
                    v /= f.channels as f32;
                    pixels[(oy + y) * out_w + ox + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        } else {
            for y in 0..fh {
                for x in 0..fw {
                    pixels[(oy + y) * out_w + ox + x] = 0;
                }
            }
        }
    }
    let mut buf = format!("P5\n{out_w} {out_h}\n255\n").into_bytes();
    buf.extend_from_slice(&pixels);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_document_is_well_formed() {
        let mut svg = Svg::new(100.0, 50.0);
        svg.circle(10.0, 10.0, 2.0, "red");
        svg.line(0.0, 0.0, 100.0, 50.0, "black", 1.0);
        svg.polyline(&[(0.0, 0.0), (5.0, 5.0)], "blue", 0.5, true);
        svg.text(1.0, 1.0, 4.0, "hi");
        let doc = svg.finish();
        assert!(doc.starts_with("<svg"));
        assert!(doc.ends_with("</svg>\n"));
        assert!(doc.contains("<circle"));
        assert!(doc.contains("<polyline"));
    }

    #[test]
    fn montage_dimensions() {
        let cells: Vec<Option<Frame>> = vec![Some(Frame::zeros(1, 4, 4)), None, None, None];
        let pgm = montage_pgm(&cells, 2, 2);
        let header = format!("P5\n{} {}\n255\n", 2 * 5 + 1, 2 * 5 + 1);
        assert!(pgm.starts_with(header.as_bytes()));
        assert_eq!(pgm.len(), header.len() + 11 * 11);
    }
}

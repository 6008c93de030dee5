//! Self-contained static SVG line charts for feature-shape exports.

use std::io::Write;
use std::path::Path;

use crate::gam::FeatureShape;
use crate::Result;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 420.0;
pub const MARGIN_LEFT: f64 = 60.0;
pub const MARGIN_RIGHT: f64 = 20.0;
pub const MARGIN_TOP: f64 = 40.0;
pub const MARGIN_BOTTOM: f64 = 50.0;

/// Axis ranges and the data-to-pixel mapping of one chart.
#[derive(Debug, Clone)]
pub struct ChartFrame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl ChartFrame {
    pub fn from_series(xs: &[f64], ys: &[f64]) -> ChartFrame {
        let (mut x_min, mut x_max) = min_max(xs);
        let (mut y_min, mut y_max) = min_max(ys);
        if x_min == x_max {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_min == y_max {
            y_min -= 0.5;
            y_max += 0.5;
        }
        // a little vertical headroom
        let pad = 0.05 * (y_max - y_min);
        ChartFrame {
            x_min,
            x_max,
            y_min: y_min - pad,
            y_max: y_max + pad,
        }
    }

    pub fn pixel_of(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
        let py = HEIGHT - MARGIN_BOTTOM
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);
        (px, py)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Render one series as a static line chart. Pixel coordinates are written
/// with three decimals so external recomputation from the data matches the
/// polyline within half a pixel.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let frame = ChartFrame::from_series(xs, ys);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    // frame
    let (x0, y0) = (MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM);
    let (x1, y1) = (WIDTH - MARGIN_RIGHT, MARGIN_TOP);
    s.push_str(&format!(
        "<rect x=\"{x0}\" y=\"{y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        x1 - x0,
        y0 - y1
    ));

    // axis ticks and labels
    for t in ticks(frame.x_min, frame.x_max, 5) {
        let (px, _) = frame.pixel_of(t, frame.y_min);
        s.push_str(&format!(
            "<line x1=\"{px:.3}\" y1=\"{y0}\" x2=\"{px:.3}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{px:.3}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            y0 + 18.0,
            format_tick(t)
        ));
    }
    for t in ticks(frame.y_min, frame.y_max, 5) {
        let (_, py) = frame.pixel_of(frame.x_min, t);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py:.3}\" x2=\"{x0}\" y2=\"{py:.3}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            x0 - 8.0,
            py + 4.0,
            format_tick(t)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    ));

    // the series itself
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let (px, py) = frame.pixel_of(x, y);
            format!("{px:.3},{py:.3}")
        })
        .collect();
    s.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write the shape series as `<name>.csv` (grid,value) and `<name>.svg`
/// into a directory.
pub fn export_shape(shape: &FeatureShape, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", shape.feature));
    let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(f, "grid,value")?;
    for (x, y) in shape.grid.iter().zip(&shape.values) {
        writeln!(f, "{x},{y}")?;
    }
    f.flush()?;

    let svg = line_chart_svg(
        &format!("feature shape: {}", shape.feature),
        &shape.feature,
        "partial effect",
        &shape.grid,
        &shape.values,
    );
    std::fs::write(dir.join(format!("{}.svg", shape.feature)), svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_matches_recomputed_coordinates() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.5).sin() * 2.0).collect();
        let svg = line_chart_svg("t", "x", "y", &xs, &ys);

        let points_attr = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let parsed: Vec<(f64, f64)> = points_attr
            .split_whitespace()
            .map(|p| {
                let mut it = p.split(',');
                (
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        assert_eq!(parsed.len(), xs.len());

        // oracle: recompute pixel coordinates from the raw series
        let frame = ChartFrame::from_series(&xs, &ys);
        for ((&x, &y), (px, py)) in xs.iter().zip(&ys).zip(parsed) {
            let (ex, ey) = frame.pixel_of(x, y);
            assert!((px - ex).abs() < 0.5, "x off: {px} vs {ex}");
            assert!((py - ey).abs() < 0.5, "y off: {py} vs {ey}");
        }
    }

    #[test]
    fn svg_is_self_contained() {
        let svg = line_chart_svg("t", "x", "y", &[0.0, 1.0], &[0.0, 1.0]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(!svg.contains("href"));
    }
}

//! Point cloud plus per-pass 1-sigma ellipses as a standalone SVG.

use std::fmt::Write;

use anyhow::Result;
use mixlab_core::{sigma_ellipse, DVector, GaussianParams};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
pub const MARGIN: f64 = 0.05;
pub const COLOURS: [&str; 5] = ["black", "blue", "red", "magenta", "cyan"];
const ELLIPSE_POINTS: usize = 64;

/// Maps the data bounding box onto the viewport, `y` pointing up.
struct Frame {
    x_min: f64,
    y_min: f64,
    sx: f64,
    sy: f64,
}

impl Frame {
    fn fit(points: &[DVector<f64>]) -> Frame {
        let (mut x_min, mut x_max, mut y_min, mut y_max) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            x_min = x_min.min(p[0]);
            x_max = x_max.max(p[0]);
            y_min = y_min.min(p[1]);
            y_max = y_max.max(p[1]);
        }
        let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
        Frame {
            x_min,
            y_min,
            sx: WIDTH * (1.0 - 2.0 * MARGIN) / span(x_min, x_max),
            sy: HEIGHT * (1.0 - 2.0 * MARGIN) / span(y_min, y_max),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            WIDTH * MARGIN + (x - self.x_min) * self.sx,
            HEIGHT * (1.0 - MARGIN) - (y - self.y_min) * self.sy,
        )
    }
}

/// `passes[p][j]` is component `j` after pass `p + 1`; `colour_rank[j]` picks
/// its colour from the cycle.
pub fn ellipse_plot(
    points: &[DVector<f64>],
    passes: &[Vec<GaussianParams>],
    colour_rank: &[usize],
) -> Result<String> {
    let frame = Frame::fit(points);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    writeln!(s, r##"<g id="points" fill="#9a9a9a">"##)?;
    for p in points {
        let (x, y) = frame.map(p[0], p[1]);
        writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1"/>"#)?;
    }
    writeln!(s, "</g>")?;
    writeln!(s, r#"<g id="ellipses" fill="none" stroke-width="1.5">"#)?;
    let n = passes.len();
    for (p, comps) in passes.iter().enumerate() {
        let opacity = 0.15 + 0.85 * (p + 1) as f64 / n as f64;
        for (j, g) in comps.iter().enumerate() {
            let colour = COLOURS[colour_rank[j] % COLOURS.len()];
            let mut d = String::new();
            for (i, q) in sigma_ellipse(g, ELLIPSE_POINTS)?.iter().enumerate() {
                let (x, y) = frame.map(q[0], q[1]);
                write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" })?;
            }
            d.push('Z');
            writeln!(
                s,
                r#"<path class="pass-{}" d="{d}" stroke="{colour}" stroke-opacity="{opacity:.3}"/>"#,
                p + 1
            )?;
        }
    }
    writeln!(s, "</g>")?;
    writeln!(s, "</svg>")?;
    Ok(s)
}

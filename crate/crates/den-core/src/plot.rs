//! Deterministic SVG scatter plots and attribution heat maps.
//!
//! All coordinates are formatted with fixed precision, so identical inputs
//! produce byte-identical files.

use crate::error::{DenError, Result};
use ndarray::Array2;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 50.0;

/// Categorical palette, cycled when there are more labels than colors.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Render a 2-D scatter, one circle per point, colored by label, with a
/// legend. Points must be N x 2.
pub fn plot_scatter(
    points: &Array2<f64>,
    labels: Option<&[usize]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    if points.ncols() != 2 {
        return Err(DenError::Shape(format!(
            "scatter plot needs 2-D points, got {} dims",
            points.ncols()
        )));
    }
    if let Some(l) = labels {
        if l.len() != points.nrows() {
            return Err(DenError::Shape("labels do not match point count".into()));
        }
    }
    let n = points.nrows();
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0f64, 1.0f64, 0.0f64, 1.0f64);
    if n > 0 {
        min_x = f64::INFINITY;
        max_x = f64::NEG_INFINITY;
        min_y = f64::INFINITY;
        max_y = f64::NEG_INFINITY;
        for row in points.rows() {
            min_x = min_x.min(row[0]);
            max_x = max_x.max(row[0]);
            min_y = min_y.min(row[1]);
            max_y = max_y.max(row[1]);
        }
        if max_x - min_x < 1e-12 {
            max_x = min_x + 1.0;
        }
        if max_y - min_y < 1e-12 {
            max_y = min_y + 1.0;
        }
    }
    let sx = (WIDTH - 2.0 * MARGIN) / (max_x - min_x);
    let sy = (HEIGHT - 2.0 * MARGIN) / (max_y - min_y);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#cccccc"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (i, row) in points.rows().into_iter().enumerate() {
        let cx = MARGIN + (row[0] - min_x) * sx;
        let cy = HEIGHT - MARGIN - (row[1] - min_y) * sy;
        let color = match labels {
            Some(l) => PALETTE[l[i] % PALETTE.len()],
            None => PALETTE[0],
        };
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="3" fill="{color}" fill-opacity="0.8"/>"#
        );
    }
    if let Some(l) = labels {
        let mut distinct: Vec<usize> = l.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        for (slot, lab) in distinct.iter().enumerate() {
            let y = MARGIN + 10.0 + slot as f64 * 18.0;
            let color = PALETTE[lab % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.3}" cy="{y:.3}" r="5" fill="{color}"/>"#,
                WIDTH - MARGIN - 60.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.3}" y="{:.3}" font-size="12" font-family="sans-serif">{lab}</text>"#,
                WIDTH - MARGIN - 50.0,
                y + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path.as_ref(), svg)
        .map_err(|e| DenError::io(path.as_ref().display().to_string(), e))
}

/// Heat-map overlay for image-shaped attributions: red for positive evidence,
/// blue for negative, cell intensity scaled by |phi| max.
pub fn plot_attribution_heatmap(
    phi: &[f64],
    rows: usize,
    cols: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if phi.len() != rows * cols {
        return Err(DenError::Shape(format!(
            "{} values cannot fill a {rows}x{cols} grid",
            phi.len()
        )));
    }
    let cell = 12.0;
    let w = cols as f64 * cell;
    let h = rows as f64 * cell;
    let max_abs = phi.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = phi[r * cols + c] / max_abs;
            let (red, blue) = if v >= 0.0 { (255, 0) } else { (0, 255) };
            let alpha = v.abs();
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({red},0,{blue})" fill-opacity="{alpha:.4}"/>"#,
                c as f64 * cell,
                r as f64 * cell
            );
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path.as_ref(), svg)
        .map_err(|e| DenError::io(path.as_ref().display().to_string(), e))
}

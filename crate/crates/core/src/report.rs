//! Standalone SVG 1.1 renderings: a residual-magnitude heatmap and a score
//! line plot with the decision threshold.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const PLOT_WIDTH: f64 = 720.0;
const PLOT_HEIGHT: f64 = 320.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
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

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r#"<rect class="background" x="0" y="0" width="{width:.0}" height="{height:.0}" fill="rgb(255,255,255)"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        MARGIN_LEFT,
        escape(title)
    );
}

/// Gray level for `|value| / max`: 255 is zero residual, 0 the largest one.
pub fn gray_level(magnitude: f64, max: f64) -> u8 {
    if max <= 0.0 {
        255
    } else {
        255 - (255.0 * (magnitude / max).clamp(0.0, 1.0)).round() as u8
    }
}

/// One cell per (row, feature) entry of `residuals`, shaded by `|S|` on a
/// linear grayscale ramp. Rows run top to bottom, features left to right.
pub fn heatmap_svg(residuals: &FeatureMatrix, title: &str) -> Result<String> {
    let (n, d) = (residuals.n_rows(), residuals.n_cols());
    if n == 0 || d == 0 {
        return Err(Error::invalid_input("cannot draw an empty heatmap"));
    }
    let cell_w = (PLOT_WIDTH / d as f64).clamp(4.0, 48.0);
    let cell_h = (PLOT_HEIGHT * 2.0 / n as f64).clamp(1.0, 24.0);
    let width = MARGIN_LEFT + cell_w * d as f64 + MARGIN_RIGHT;
    let height = MARGIN_TOP + cell_h * n as f64 + MARGIN_BOTTOM;
    let max = residuals
        .values()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut out = String::new();
    header(&mut out, width, height, title);
    let _ = writeln!(out, r#"<g class="cells" shape-rendering="crispEdges">"#);
    for (i, row) in residuals.rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let g = gray_level(v.abs(), max);
            let _ = writeln!(
                out,
                r#"<rect class="cell" data-row="{i}" data-col="{j}" x="{:.2}" y="{:.2}" width="{cell_w:.2}" height="{cell_h:.2}" fill="rgb({g},{g},{g})"/>"#,
                MARGIN_LEFT + cell_w * j as f64,
                MARGIN_TOP + cell_h * i as f64,
            );
        }
    }
    let _ = writeln!(out, "</g>");
    let label_y = MARGIN_TOP + cell_h * n as f64 + 14.0;
    for (j, name) in residuals.col_names().iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text class="feature" x="{:.2}" y="{label_y:.2}" font-family="sans-serif" font-size="9" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + cell_w * (j as f64 + 0.5),
            escape(name)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">max |S| = {max:.4}</text>"#,
        MARGIN_LEFT,
        label_y + 16.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Scores as a polyline over row index with a horizontal threshold line.
pub fn score_plot_svg(scores: &[f64], threshold: f64, title: &str) -> Result<String> {
    if scores.is_empty() {
        return Err(Error::invalid_input("cannot plot an empty score vector"));
    }
    if scores.iter().chain([&threshold]).any(|s| !s.is_finite()) {
        return Err(Error::invalid_input("scores and threshold must be finite"));
    }
    let y_max = scores.iter().fold(threshold.max(0.0), |m, &s| m.max(s));
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let x_span = (scores.len() - 1).max(1) as f64;
    let sx = |i: usize| MARGIN_LEFT + PLOT_WIDTH * i as f64 / x_span;
    let sy = |v: f64| MARGIN_TOP + PLOT_HEIGHT * (1.0 - v / y_max);
    let width = MARGIN_LEFT + PLOT_WIDTH + MARGIN_RIGHT;
    let height = MARGIN_TOP + PLOT_HEIGHT + MARGIN_BOTTOM;

    let mut out = String::new();
    header(&mut out, width, height, title);
    let (x0, x1, y0, y1) = (
        MARGIN_LEFT,
        MARGIN_LEFT + PLOT_WIDTH,
        MARGIN_TOP,
        MARGIN_TOP + PLOT_HEIGHT,
    );
    let _ = writeln!(
        out,
        r#"<path class="axes" d="M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}" fill="none" stroke="rgb(0,0,0)" stroke-width="1"/>"#
    );
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text class="tick" x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="9" text-anchor="end">{v:.2}</text>"#,
            x0 - 4.0,
            sy(v) + 3.0
        );
    }
    let points: Vec<String> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| format!("{:.2},{:.2}", sx(i), sy(s)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="scores" points="{}" fill="none" stroke="rgb(31,119,180)" stroke-width="1"/>"#,
        points.join(" ")
    );
    let ty = sy(threshold);
    let _ = writeln!(
        out,
        r#"<line class="threshold" x1="{x0:.2}" y1="{ty:.2}" x2="{x1:.2}" y2="{ty:.2}" stroke="rgb(214,39,40)" stroke-width="1" stroke-dasharray="4,3"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">threshold = {threshold:.4}</text>"#,
        x1,
        ty - 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">row index</text>"#,
        (x0 + x1) / 2.0,
        y1 + 28.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

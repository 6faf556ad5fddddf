//! Confusion counts, precision / recall / F1, threshold sweeps and the
//! per-level evaluation table.
//!
//! All three metrics use the convention `0 / 0 = 0`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hierarchy::LevelDataset;
use crate::model::{self, LevelModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(flags: &[bool], labels: &[bool]) -> Result<Confusion> {
    if flags.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} flags vs {} labels",
            flags.len(),
            labels.len()
        )));
    }
    let mut c = Confusion::default();
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(c: &Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn f1(c: &Confusion) -> f64 {
    f1_from(precision(c), recall(c))
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ascending by threshold.
    pub points: Vec<SweepPoint>,
    pub best_index: usize,
    pub best_threshold: f64,
    pub best_f1: f64,
}

impl SweepResult {
    pub fn best(&self) -> &SweepPoint {
        &self.points[self.best_index]
    }
}

/// Midpoints between consecutive distinct scores, plus one point below the
/// minimum and one above the maximum (offset by half the neighbouring gap, or
/// by `max(1, |score|) / 2` when all scores coincide).
pub fn default_grid(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let (lo, hi) = match distinct.as_slice() {
        [] => return Vec::new(),
        [only] => {
            let pad = only.abs().max(1.0) / 2.0;
            (only - pad, only + pad)
        }
        many => {
            let n = many.len();
            (
                many[0] - (many[1] - many[0]) / 2.0,
                many[n - 1] + (many[n - 1] - many[n - 2]) / 2.0,
            )
        }
    };
    let mut grid = Vec::with_capacity(distinct.len() + 1);
    grid.push(lo);
    grid.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    grid.push(hi);
    grid
}

/// Evaluates flag + confusion + metrics at each grid threshold.
///
/// The best threshold is the smallest one reaching the maximal F1. When no
/// threshold achieves a positive F1 (e.g. no positive labels), the largest
/// grid point is reported instead, so the recommended threshold flags nothing.
pub fn threshold_sweep(
    scores: &[f64],
    labels: &[bool],
    grid: Option<&[f64]>,
) -> Result<SweepResult> {
    if scores.is_empty() {
        return Err(Error::invalid_input("cannot sweep an empty score vector"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid_input("scores must be finite"));
    }
    let grid = match grid {
        Some(g) => {
            if g.is_empty()
                || g.windows(2).any(|w| !(w[0] < w[1]))
                || g.iter().any(|t| !t.is_finite())
            {
                return Err(Error::invalid_input(
                    "grid must be non-empty, finite and strictly ascending",
                ));
            }
            g.to_vec()
        }
        None => default_grid(scores),
    };

    let mut points = Vec::with_capacity(grid.len());
    for &t in &grid {
        let flags = model::flag_unchecked(scores, t);
        let c = confusion(&flags, labels)?;
        let (p, r) = (precision(&c), recall(&c));
        points.push(SweepPoint {
            threshold: t,
            confusion: c,
            precision: p,
            recall: r,
            f1: f1_from(p, r),
        });
    }

    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.f1 > points[best].f1 {
            best = i;
        }
    }
    if points[best].f1 == 0.0 {
        best = points.len() - 1;
    }
    Ok(SweepResult {
        best_index: best,
        best_threshold: points[best].threshold,
        best_f1: points[best].f1,
        points,
    })
}

/// One row of the per-level performance table.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelEvaluation {
    pub level: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Scores each test level with its model and reports the F1-optimal sweep point.
pub fn evaluate_hierarchy(
    models: &[LevelModel],
    test_chain: &[LevelDataset],
) -> Result<Vec<LevelEvaluation>> {
    test_chain
        .iter()
        .map(|level| {
            let model = models
                .iter()
                .find(|m| m.level_name == level.level_name)
                .ok_or_else(|| {
                    Error::invalid_input(format!("no model for level `{}`", level.level_name))
                })?;
            let labels = level.labels.as_deref().ok_or_else(|| {
                Error::invalid_input(format!("level `{}` has no labels", level.level_name))
            })?;
            let scores = model::score(model, &level.matrix)?;
            evaluate_scores(&level.level_name, &scores, labels)
        })
        .collect()
}

pub fn evaluate_scores(level: &str, scores: &[f64], labels: &[bool]) -> Result<LevelEvaluation> {
    let sweep = threshold_sweep(scores, labels, None)?;
    let best = sweep.best();
    Ok(LevelEvaluation {
        level: level.to_string(),
        threshold: best.threshold,
        precision: best.precision,
        recall: best.recall,
        f1: best.f1,
        confusion: best.confusion,
    })
}

/// Aligned text table with two-decimal values.
pub fn format_table(rows: &[LevelEvaluation]) -> String {
    let headers = ["Level", "Threshold", "Precision", "Recall", "F1 Score"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.level.clone(),
                format!("{:.2}", r.threshold),
                format!("{:.2}", r.precision),
                format!("{:.2}", r.recall),
                format!("{:.2}", r.f1),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: [&str; 5], out: &mut String| {
        let _ = write!(out, "{:<w$}", cells[0], w = widths[0]);
        for (cell, w) in cells[1..].iter().zip(&widths[1..]) {
            let _ = write!(out, "  {cell:>w$}");
        }
        out.push('\n');
    };
    line(headers, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line([&rule[0], &rule[1], &rule[2], &rule[3], &rule[4]], &mut out);
    for row in &body {
        line([&row[0], &row[1], &row[2], &row[3], &row[4]], &mut out);
    }
    out
}

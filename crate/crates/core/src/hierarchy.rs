//! Multi-level aggregation schema and rollups.
//!
//! Children are grouped contiguously: with fan-out `f`, child rows
//! `[p*f, (p+1)*f)` roll up into parent row `p`. Ground-truth labels
//! propagate upward with an any-child rule.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggOp {
    #[default]
    Mean,
    Sum,
}

/// Ordered levels, finest first, with the fan-out between each adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySpec {
    pub levels: Vec<String>,
    pub fan_out: Vec<usize>,
    pub agg_op: AggOp,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            levels: ["interaction", "session", "profile", "account"]
                .map(String::from)
                .to_vec(),
            fan_out: vec![5, 5, 5],
            agg_op: AggOp::Mean,
        }
    }
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::invalid_config(
                "a hierarchy needs at least two levels",
            ));
        }
        if self.fan_out.len() != self.levels.len() - 1 {
            return Err(Error::invalid_config(format!(
                "{} levels need {} fan-outs, got {}",
                self.levels.len(),
                self.levels.len() - 1,
                self.fan_out.len()
            )));
        }
        if self.fan_out.contains(&0) {
            return Err(Error::invalid_config("fan-out must be at least 1"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.levels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::invalid_config(format!(
                "duplicate level name `{dup}`"
            )));
        }
        Ok(())
    }

    /// Number of base rows per top-level row.
    pub fn total_fan_out(&self) -> usize {
        self.fan_out.iter().product()
    }
}

/// One level's data: the matrix, optional ground-truth labels, and (once
/// rolled up) each row's parent index at the next level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDataset {
    pub level_name: String,
    pub matrix: FeatureMatrix,
    pub labels: Option<Vec<bool>>,
    pub parent_of: Option<Vec<usize>>,
}

impl LevelDataset {
    pub fn new(
        level_name: impl Into<String>,
        matrix: FeatureMatrix,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != matrix.n_rows() {
                return Err(Error::shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    matrix.n_rows()
                )));
            }
        }
        Ok(Self {
            level_name: level_name.into(),
            matrix,
            labels,
            parent_of: None,
        })
    }

    pub fn positives(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|b| **b).count())
    }
}

fn check_divisible(n: usize, fan_out: usize) -> Result<()> {
    if fan_out == 0 {
        return Err(Error::invalid_config("fan-out must be at least 1"));
    }
    if !n.is_multiple_of(fan_out) {
        return Err(Error::shape(format!(
            "{n} rows are not divisible by fan-out {fan_out}"
        )));
    }
    Ok(())
}

/// Aggregates contiguous groups of `fan_out` child rows into one parent row.
///
/// Records `parent_of` on the child. Parent row ids are `<parent_level>-<index>`.
pub fn rollup(
    child: &mut LevelDataset,
    parent_level: &str,
    fan_out: usize,
    agg_op: AggOp,
) -> Result<LevelDataset> {
    let x = &child.matrix;
    check_divisible(x.n_rows(), fan_out)?;
    let n_parents = x.n_rows() / fan_out;
    let d = x.n_cols();
    let scale = match agg_op {
        AggOp::Mean => 1.0 / fan_out as f64,
        AggOp::Sum => 1.0,
    };
    let mut values = vec![0.0; n_parents * d];
    for (p, out) in values.chunks_mut(d.max(1)).take(n_parents).enumerate() {
        for c in p * fan_out..(p + 1) * fan_out {
            for (o, v) in out.iter_mut().zip(x.row(c)) {
                *o += v;
            }
        }
        if agg_op == AggOp::Mean {
            out.iter_mut().for_each(|o| *o *= scale);
        }
    }
    let row_ids = (0..n_parents)
        .map(|p| format!("{parent_level}-{p}"))
        .collect();
    let matrix = FeatureMatrix::new(row_ids, x.col_names().to_vec(), values)?;
    let labels = child
        .labels
        .as_deref()
        .map(|l| propagate_labels(l, fan_out))
        .transpose()?;
    child.parent_of = Some((0..x.n_rows()).map(|c| c / fan_out).collect());
    LevelDataset::new(parent_level, matrix, labels)
}

/// Parent label = any child label.
pub fn propagate_labels(child_labels: &[bool], fan_out: usize) -> Result<Vec<bool>> {
    check_divisible(child_labels.len(), fan_out)?;
    Ok(child_labels
        .chunks(fan_out)
        .map(|c| c.iter().any(|b| *b))
        .collect())
}

/// Rolls `base` all the way up `spec`, returning one dataset per level (finest first).
pub fn build_level_chain(base: LevelDataset, spec: &HierarchySpec) -> Result<Vec<LevelDataset>> {
    spec.validate()?;
    if base.level_name != spec.levels[0] {
        return Err(Error::invalid_config(format!(
            "base level `{}` does not match finest hierarchy level `{}`",
            base.level_name, spec.levels[0]
        )));
    }
    check_divisible(base.matrix.n_rows(), spec.total_fan_out())?;
    let mut chain = vec![base];
    for (name, &fan_out) in spec.levels[1..].iter().zip(&spec.fan_out) {
        let child = chain.last_mut().expect("chain starts non-empty");
        let parent = rollup(child, name, fan_out, spec.agg_op)?;
        chain.push(parent);
    }
    Ok(chain)
}

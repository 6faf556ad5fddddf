use std::collections::HashSet;

use crate::error::{Error, Result};

/// Dense row-major matrix of feature values with named rows and columns.
///
/// Rows are entities (interactions, sessions, profiles, ...) and columns are
/// numeric features. All values are finite and names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    col_names: Vec<String>,
    row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(row_ids: Vec<String>, col_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n_rows = row_ids.len();
        let n_cols = col_names.len();
        if values.len() != n_rows * n_cols {
            return Err(Error::shape(format!(
                "{} values for a {n_rows}x{n_cols} matrix",
                values.len()
            )));
        }
        check_unique("row id", &row_ids)?;
        check_unique("column name", &col_names)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid_input(format!(
                "non-finite value at row {}, column {}",
                pos / n_cols.max(1),
                pos % n_cols.max(1)
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
            col_names,
            row_ids,
        })
    }

    /// Builds a matrix from nested rows, naming rows `r<i>` and columns `f<j>`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(
            default_names("r", rows.len()),
            default_names("f", n_cols),
            rows.iter().flatten().copied().collect(),
        )
    }

    /// Same shape and names as `self`, with new values. Values are assumed finite.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub(crate) fn from_parts_unchecked(
        row_ids: Vec<String>,
        col_names: Vec<String>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), row_ids.len() * col_names.len());
        Self {
            n_rows: row_ids.len(),
            n_cols: col_names.len(),
            values,
            col_names,
            row_ids,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Returns a copy with rows reordered so that output row `k` is input row `order[k]`.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self> {
        let row_ids = order
            .iter()
            .map(|&i| {
                self.row_ids
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid_input(format!("row {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        check_unique("row id", &row_ids)?;
        let values = order
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        Ok(Self::from_parts_unchecked(
            row_ids,
            self.col_names.clone(),
            values,
        ))
    }
}

pub(crate) fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn check_unique(what: &str, names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid_input(format!("duplicate {what} `{name}`")));
        }
    }
    Ok(())
}

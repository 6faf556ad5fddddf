//! Per-level low-rank models: fitting, low-rank plus sparse decomposition,
//! residual scoring and threshold flagging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LevelDataset;
use crate::linalg::{self, SvdResult};
use crate::matrix::FeatureMatrix;

/// Version string stamped into every fitted model.
pub const MODEL_VERSION: &str = "1.0.0";

pub const DEFAULT_VARIANCE_CUTOFF: f64 = 0.95;
pub const DEFAULT_DYNAMIC_K: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Fixed(usize),
    ExplainedVariance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Use the given residual norm as-is.
    Fixed(f64),
    /// `mean + k * std` of the training residual norms.
    Dynamic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub rank: RankMode,
    pub threshold: ThresholdMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: RankMode::ExplainedVariance(DEFAULT_VARIANCE_CUTOFF),
            threshold: ThresholdMode::Dynamic(DEFAULT_DYNAMIC_K),
        }
    }
}

impl FitConfig {
    pub fn fixed_rank(rank: usize) -> Self {
        Self {
            rank: RankMode::Fixed(rank),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.rank {
            RankMode::Fixed(0) => {
                return Err(Error::invalid_config("fixed rank must be at least 1"))
            }
            RankMode::ExplainedVariance(c) if !(c > 0.0 && c <= 1.0) => {
                return Err(Error::invalid_config(format!(
                    "variance cutoff {c} outside (0, 1]"
                )))
            }
            _ => {}
        }
        match self.threshold {
            ThresholdMode::Fixed(t) if !(t >= 0.0 && t.is_finite()) => Err(Error::invalid_config(
                format!("fixed threshold {t} must be finite and >= 0"),
            )),
            ThresholdMode::Dynamic(k) if !(k > 0.0 && k.is_finite()) => Err(Error::invalid_config(
                format!("dynamic k {k} must be finite and > 0"),
            )),
            _ => Ok(()),
        }
    }
}

/// A fitted model for one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelModel {
    pub level_name: String,
    pub feature_names: Vec<String>,
    pub col_means: Vec<f64>,
    /// Orthonormal principal directions, one vector of length `d` per mode.
    pub basis: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub threshold: f64,
    pub train_residual_mean: f64,
    pub train_residual_std: f64,
    pub version: String,
    pub content_hash: String,
}

/// `X = L + S` for one matrix, plus the row norms of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub low_rank: FeatureMatrix,
    pub sparse: FeatureMatrix,
    pub scores: Vec<f64>,
}

/// Fits a level model on clean training rows.
pub fn fit(level_name: &str, x_train: &FeatureMatrix, cfg: &FitConfig) -> Result<LevelModel> {
    cfg.validate()?;
    let (n, d) = (x_train.n_rows(), x_train.n_cols());
    if n < 2 {
        return Err(Error::invalid_input(format!(
            "need at least 2 training rows, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid_input("training matrix has no columns"));
    }
    let limit = n.min(d);
    if let RankMode::Fixed(r) = cfg.rank {
        if r > limit || r >= n {
            return Err(Error::invalid_config(format!(
                "rank {r} needs more than {r} rows and at most min(rows, cols) = {limit}"
            )));
        }
    }

    let (centered, col_means) = linalg::center_columns(x_train)?;
    let full = linalg::truncated_svd(
        &centered,
        limit,
        linalg::DEFAULT_SVD_TOL,
        linalg::DEFAULT_SVD_MAX_ITERS,
    )?;
    let wanted = match cfg.rank {
        RankMode::Fixed(r) => r,
        RankMode::ExplainedVariance(cutoff) => {
            linalg::rank_by_explained_variance(&full.singular_values, cutoff)?
        }
    };
    let SvdResult {
        mut basis,
        mut singular_values,
        ..
    } = full;
    let rank = wanted.min(basis.len());
    basis.truncate(rank);
    singular_values.truncate(rank);

    let mut model = LevelModel {
        level_name: level_name.to_string(),
        feature_names: x_train.col_names().to_vec(),
        col_means,
        basis,
        singular_values,
        rank,
        threshold: 0.0,
        train_residual_mean: 0.0,
        train_residual_std: 0.0,
        version: MODEL_VERSION.to_string(),
        content_hash: String::new(),
    };

    let residuals = score(&model, x_train)?;
    let (mean, std) = mean_and_population_std(&residuals);
    model.train_residual_mean = mean;
    model.train_residual_std = std;
    model.threshold = match cfg.threshold {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Dynamic(k) => mean + k * std,
    };
    model.refresh_hash();
    Ok(model)
}

pub(crate) fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl LevelModel {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Replaces the flagging threshold and refreshes the content hash.
    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::invalid_config(format!(
                "threshold {threshold} must be finite and >= 0"
            )));
        }
        self.threshold = threshold;
        self.refresh_hash();
        Ok(self)
    }

    pub fn refresh_hash(&mut self) {
        self.content_hash = crate::store::model_hash(self);
    }

    /// Checks that `x` has exactly this model's feature columns, in order.
    pub fn check_schema(&self, x: &FeatureMatrix) -> Result<()> {
        if x.n_cols() != self.dim() {
            return Err(Error::schema(format!(
                "level `{}` expects {} columns, got {}",
                self.level_name,
                self.dim(),
                x.n_cols()
            )));
        }
        if let Some((want, got)) = self
            .feature_names
            .iter()
            .zip(x.col_names())
            .find(|(a, b)| a != b)
        {
            return Err(Error::schema(format!(
                "level `{}` expects column `{want}`, got `{got}`",
                self.level_name
            )));
        }
        Ok(())
    }

    /// Coordinates of the centered row along each basis direction. No length check.
    pub(crate) fn project(&self, row: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = row
            .iter()
            .zip(&self.col_means)
            .map(|(x, m)| x - m)
            .collect();
        self.basis
            .iter()
            .map(|u| linalg::dot(&centered, u))
            .collect()
    }

    /// `μ + Σ_j p_j u_j`. No length check.
    pub(crate) fn lift(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.col_means.clone();
        for (p, u) in coords.iter().zip(&self.basis) {
            for (o, ui) in out.iter_mut().zip(u) {
                *o += p * ui;
            }
        }
        out
    }
}

/// Splits `x` into its projection onto the model's affine subspace and the residual.
pub fn decompose(model: &LevelModel, x: &FeatureMatrix) -> Result<Decomposition> {
    model.check_schema(x)?;
    let d = model.dim();
    let mut low = Vec::with_capacity(x.values().len());
    let mut sparse = Vec::with_capacity(x.values().len());
    let mut scores = Vec::with_capacity(x.n_rows());
    for row in x.rows() {
        let l = model.lift(&model.project(row));
        let s: Vec<f64> = row.iter().zip(&l).map(|(a, b)| a - b).collect();
        scores.push(linalg::l2_norm(&s));
        low.extend(l);
        sparse.extend(s);
    }
    debug_assert_eq!(low.len(), x.n_rows() * d);
    Ok(Decomposition {
        low_rank: x.with_values(low),
        sparse: x.with_values(sparse),
        scores,
    })
}

/// Row-wise residual norms of `x` under the model.
pub fn score(model: &LevelModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    Ok(decompose(model, x)?.scores)
}

/// `scores[i] > threshold`, strictly.
pub fn flag(scores: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid_config(format!(
            "threshold {threshold} must be >= 0"
        )));
    }
    Ok(flag_unchecked(scores, threshold))
}

pub(crate) fn flag_unchecked(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|s| *s > threshold).collect()
}

/// Fits one model per level of a chain, finest first.
pub fn fit_levels(chain: &[LevelDataset], cfg: &FitConfig) -> Result<Vec<LevelModel>> {
    chain
        .iter()
        .map(|level| fit(&level.level_name, &level.matrix, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(n: usize) -> FeatureMatrix {
        let a: Vec<f64> = (0..n)
            .map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64)
            .collect();
        let b = [0.3, -1.2, 2.0, 0.5];
        let rows: Vec<Vec<f64>> = a
            .iter()
            .map(|ai| b.iter().map(|bj| ai * bj).collect())
            .collect();
        FeatureMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn exact_rank_one_fits_with_zero_residual() {
        let x = rank_one(12);
        let model = fit("lvl", &x, &FitConfig::fixed_rank(1)).unwrap();
        assert_eq!(model.rank, 1);
        assert!(score(&model, &x).unwrap().iter().all(|s| *s < 1e-8));
        assert!(model.threshold < 1e-8);
    }

    #[test]
    fn explained_variance_picks_rank_one_for_dominant_mode() {
        // Centered spectrum is exactly [10, 0.1].
        let x = FeatureMatrix::from_rows(&[
            vec![5.0, 0.05],
            vec![-5.0, 0.05],
            vec![5.0, -0.05],
            vec![-5.0, -0.05],
        ])
        .unwrap();
        let sv = linalg::singular_values(&linalg::center_columns(&x).unwrap().0).unwrap();
        assert!((sv[0] - 10.0).abs() < 1e-12 && (sv[1] - 0.1).abs() < 1e-12);
        let model = fit("lvl", &x, &FitConfig::default()).unwrap();
        assert_eq!(model.rank, 1);
    }

    #[test]
    fn fit_rejects_excess_rank_and_degenerate_data() {
        let x = rank_one(3);
        assert!(matches!(
            fit("lvl", &x, &FitConfig::fixed_rank(3)),
            Err(Error::InvalidConfig(_))
        ));
        let flat = FeatureMatrix::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert!(matches!(
            fit("lvl", &flat, &FitConfig::fixed_rank(1)),
            Err(Error::DegenerateSpectrum)
        ));
        let one = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            fit("lvl", &one, &FitConfig::fixed_rank(1)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn fixed_threshold_mode_is_used_verbatim() {
        let cfg = FitConfig {
            rank: RankMode::Fixed(1),
            threshold: ThresholdMode::Fixed(5.24),
        };
        let model = fit("lvl", &rank_one(8), &cfg).unwrap();
        assert_eq!(model.threshold, 5.24);
    }

    #[test]
    fn decompose_mean_and_basis_rows_have_no_residual() {
        let x = rank_one(10);
        let model = fit("lvl", &x, &FitConfig::fixed_rank(1)).unwrap();
        let mu = model.col_means.clone();
        let along: Vec<f64> = mu
            .iter()
            .zip(&model.basis[0])
            .map(|(m, u)| m + 7.5 * u)
            .collect();
        let probe = FeatureMatrix::from_rows(&[mu.clone(), mu, along]).unwrap();
        let dec = decompose(&model, &probe).unwrap();
        assert!(dec.scores.iter().all(|s| *s < 1e-12));
    }

    #[test]
    fn orthogonal_offset_keeps_its_norm() {
        let x = rank_one(10);
        let model = fit("lvl", &x, &FitConfig::fixed_rank(1)).unwrap();
        let u = &model.basis[0];
        // Gram-Schmidt a fixed direction against u, then scale to length 5 and 9.
        let e = [1.0, 0.0, 0.0, 0.0];
        let proj = linalg::dot(&e, u);
        let mut v: Vec<f64> = e.iter().zip(u).map(|(a, b)| a - proj * b).collect();
        let n = linalg::l2_norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        for len in [5.0, 9.0] {
            let row: Vec<f64> = model
                .col_means
                .iter()
                .zip(&v)
                .map(|(m, vi)| m + len * vi)
                .collect();
            let s = score(&model, &FeatureMatrix::from_rows(&[row]).unwrap()).unwrap();
            assert!((s[0] - len).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_matrix_scores_empty() {
        let model = fit("lvl", &rank_one(6), &FitConfig::fixed_rank(1)).unwrap();
        let empty = FeatureMatrix::new(vec![], model.feature_names.clone(), vec![]).unwrap();
        assert!(score(&model, &empty).unwrap().is_empty());
    }

    #[test]
    fn schema_mismatch_detected() {
        let model = fit("lvl", &rank_one(6), &FitConfig::fixed_rank(1)).unwrap();
        let narrow = FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            decompose(&model, &narrow),
            Err(Error::SchemaMismatch(_))
        ));
        let renamed = FeatureMatrix::new(
            vec!["r".into()],
            vec!["f0".into(), "f1".into(), "f2".into(), "zz".into()],
            vec![0.0; 4],
        )
        .unwrap();
        assert!(matches!(
            score(&model, &renamed),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn flag_examples() {
        assert_eq!(flag(&[5.3, 1.0], 5.24).unwrap(), vec![true, false]);
        assert_eq!(flag(&[0.0, 0.0], 0.0).unwrap(), vec![false, false]);
        let s = [0.5, 3.0, 2.0];
        assert_eq!(flag(&s, 3.0).unwrap(), vec![false; 3]);
        assert!(matches!(flag(&s, -1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn with_threshold_changes_hash() {
        let model = fit("lvl", &rank_one(6), &FitConfig::fixed_rank(1)).unwrap();
        let before = model.content_hash.clone();
        let moved = model.with_threshold(2.5).unwrap();
        assert_ne!(before, moved.content_hash);
    }
}

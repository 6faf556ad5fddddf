//! Eigenvector backtracking: which latent pattern and which features explain
//! a flagged row.
//!
//! For a model with mean `μ` and basis `u_1..u_r`, a row `x` has projection
//! scores `p_j = (x − μ)·u_j`. A mode is *dominant* when its standardized
//! score `|p_j − mean_j| / std_j` (statistics taken over the training rows)
//! exceeds a z-threshold. Its most influential features are those with the
//! largest `|u_{j,i}|`.
//!
//! Rows flagged only through the residual have no dominant mode; their
//! evidence lives off the model subspace, so they are attributed to the
//! features with the largest sparse-residual magnitude `|S_i|` instead.

use chrono::{DateTime, Duration, Utc};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::FeatureMatrix;
use crate::model::{self, mean_and_population_std, LevelModel};

pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;
pub const DEFAULT_TOP_K: usize = 3;

/// Default look-back for change-log annotation.
pub fn default_window() -> Duration {
    Duration::hours(24)
}

/// Per-mode mean and population std of projection scores over reference rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeLogEvent {
    pub timestamp: DateTime<Utc>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRecord {
    pub row_id: String,
    pub timestamp: Option<DateTime<Utc>>,
    pub score: f64,
    pub projections: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub dominant_mode: Option<usize>,
    /// Features of the dominant mode ranked by `|u_{j*,i}|`; empty without one.
    pub top_features: Vec<(String, f64)>,
    /// Features ranked by sparse-residual magnitude `|S_i|`.
    pub residual_features: Vec<(String, f64)>,
    pub annotation_tag: String,
}

impl AttributionRecord {
    /// The dominant mode's top feature, or the top residual feature without one.
    pub fn attributed_feature(&self) -> Option<&str> {
        self.top_features
            .first()
            .or(self.residual_features.first())
            .map(|(name, _)| name.as_str())
    }

    fn base_tag(&self) -> String {
        let feature = self.attributed_feature().unwrap_or("-");
        match self.dominant_mode {
            Some(j) => format!("mode {j} / feature {feature}"),
            None => format!("residual / feature {feature}"),
        }
    }
}

/// `p_j = (row − μ)·u_j` for every mode.
pub fn projection_scores(model: &LevelModel, row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != model.dim() {
        return Err(Error::schema(format!(
            "row has {} values, level `{}` expects {}",
            row.len(),
            model.level_name,
            model.dim()
        )));
    }
    Ok(model.project(row))
}

pub fn reference_stats(model: &LevelModel, x_train: &FeatureMatrix) -> Result<ProjectionStats> {
    model.check_schema(x_train)?;
    let projections: Vec<Vec<f64>> = x_train.rows().map(|r| model.project(r)).collect();
    let (mean, std) = (0..model.rank)
        .map(|j| {
            let column: Vec<f64> = projections.iter().map(|p| p[j]).collect();
            mean_and_population_std(&column)
        })
        .unzip();
    Ok(ProjectionStats { mean, std })
}

/// Statistics of the training projections recovered from the model alone.
///
/// Training rows are centered before the decomposition, so their projections
/// onto `u_j` have mean zero and population std `σ_j / √n`.
pub fn stats_from_spectrum(model: &LevelModel, n_train: usize) -> Result<ProjectionStats> {
    if n_train == 0 {
        return Err(Error::invalid_input("training row count must be positive"));
    }
    let root_n = (n_train as f64).sqrt();
    Ok(ProjectionStats {
        mean: vec![0.0; model.rank],
        std: model.singular_values.iter().map(|s| s / root_n).collect(),
    })
}

/// `|p_j − mean_j| / std_j`, with `0` for `0/0` and `+∞` when only the std is zero.
pub fn z_scores(projections: &[f64], stats: &ProjectionStats) -> Vec<f64> {
    projections
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(p, (m, s))| {
            let dev = (p - m).abs();
            if *s > 0.0 {
                dev / s
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Mode with the largest z-score, if that score exceeds `z_threshold` (lowest index on ties).
pub fn dominant_mode(
    projections: &[f64],
    stats: &ProjectionStats,
    z_threshold: f64,
) -> Option<(usize, f64)> {
    let z = z_scores(projections, stats);
    let mut best: Option<(usize, f64)> = None;
    for (j, &zj) in z.iter().enumerate() {
        if best.is_none_or(|(_, b)| zj > b) {
            best = Some((j, zj));
        }
    }
    best.filter(|(_, zj)| *zj > z_threshold)
}

fn ranked(names: &[String], weights: impl Iterator<Item = f64>, k: usize) -> Vec<(String, f64)> {
    let mut items: Vec<(usize, f64)> = weights.enumerate().collect();
    // Stable sort keeps ascending feature index among equal weights.
    items.sort_by(|a, b| b.1.total_cmp(&a.1));
    items
        .into_iter()
        .take(k)
        .map(|(i, w)| (names[i].clone(), w))
        .collect()
}

/// Features ranked by `|u_{mode,i}|` descending, ties by feature index.
pub fn top_features(model: &LevelModel, mode: usize, k: usize) -> Result<Vec<(String, f64)>> {
    let u = model.basis.get(mode).ok_or_else(|| {
        Error::invalid_input(format!("mode {mode} out of range for rank {}", model.rank))
    })?;
    if k == 0 {
        return Err(Error::invalid_input("k must be at least 1"));
    }
    Ok(ranked(&model.feature_names, u.iter().map(|x| x.abs()), k))
}

/// Features ranked by the magnitude of the row's sparse residual.
pub fn residual_features(model: &LevelModel, row: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    let p = projection_scores(model, row)?;
    let low = model.lift(&p);
    let residual = row.iter().zip(&low).map(|(x, l)| (x - l).abs());
    Ok(ranked(&model.feature_names, residual, k))
}

/// `μ + Σ_j p_j u_j`.
pub fn reconstruct_from_modes(model: &LevelModel, projections: &[f64]) -> Result<Vec<f64>> {
    if projections.len() != model.rank {
        return Err(Error::invalid_input(format!(
            "{} projections for a rank-{} model",
            projections.len(),
            model.rank
        )));
    }
    Ok(model.lift(projections))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionOptions {
    pub z_threshold: f64,
    pub top_k: usize,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self {
            z_threshold: DEFAULT_Z_THRESHOLD,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// Builds an attribution record for every row of `x`.
pub fn attribute_rows(
    model: &LevelModel,
    x: &FeatureMatrix,
    stats: &ProjectionStats,
    opts: &AttributionOptions,
) -> Result<Vec<AttributionRecord>> {
    model.check_schema(x)?;
    if stats.mean.len() != model.rank || stats.std.len() != model.rank {
        return Err(Error::invalid_input(
            "projection stats do not match the model rank",
        ));
    }
    if opts.top_k == 0 {
        return Err(Error::invalid_input("top_k must be at least 1"));
    }
    x.rows()
        .zip(x.row_ids())
        .map(|(row, id)| {
            let projections = model.project(row);
            let z = z_scores(&projections, stats);
            let dominant = dominant_mode(&projections, stats, opts.z_threshold).map(|(j, _)| j);
            let top = match dominant {
                Some(j) => top_features(model, j, opts.top_k)?,
                None => Vec::new(),
            };
            let residual = residual_features(model, row, opts.top_k)?;
            let low = model.lift(&projections);
            let score =
                linalg::l2_norm(&row.iter().zip(&low).map(|(a, b)| a - b).collect::<Vec<_>>());
            let mut record = AttributionRecord {
                row_id: id.clone(),
                timestamp: None,
                score,
                projections,
                z_scores: z,
                dominant_mode: dominant,
                top_features: top,
                residual_features: residual,
                annotation_tag: String::new(),
            };
            record.annotation_tag = record.base_tag();
            Ok(record)
        })
        .collect()
}

/// Tags each record with its mode/feature and, when a change-log event falls
/// within `window` before the record's timestamp, the latest such event.
pub fn annotate(
    records: &mut [AttributionRecord],
    events: &[ChangeLogEvent],
    window: Duration,
) -> Result<()> {
    if events.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
        return Err(Error::invalid_input(
            "change-log events must be sorted by timestamp",
        ));
    }
    for record in records.iter_mut() {
        let mut tag = record.base_tag();
        if let Some(t) = record.timestamp {
            let nearby = events
                .iter()
                .rev()
                .find(|e| e.timestamp <= t && t - e.timestamp <= window);
            if let Some(event) = nearby {
                tag.push_str("; near change: ");
                tag.push_str(&event.description);
            }
        }
        record.annotation_tag = tag;
    }
    Ok(())
}

/// Per-mode series of mean `|p_j|` over time-ordered batches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProjectionSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    /// `values[j][t]` is the mean `|p_j|` of batch `t`.
    pub values: Vec<Vec<f64>>,
    /// Timestamps of empty batches that were skipped.
    pub skipped: Vec<DateTime<Utc>>,
}

pub fn projection_series(
    model: &LevelModel,
    batches: &[(DateTime<Utc>, FeatureMatrix)],
) -> Result<ProjectionSeries> {
    if batches.windows(2).any(|w| w[0].0 > w[1].0) {
        return Err(Error::invalid_input("batches must be in time order"));
    }
    let mut series = ProjectionSeries {
        values: vec![Vec::new(); model.rank],
        ..ProjectionSeries::default()
    };
    for (t, batch) in batches {
        model.check_schema(batch)?;
        if batch.n_rows() == 0 {
            series.skipped.push(*t);
            continue;
        }
        let mut sums = vec![0.0; model.rank];
        for row in batch.rows() {
            for (s, p) in sums.iter_mut().zip(model.project(row)) {
                *s += p.abs();
            }
        }
        for (col, s) in series.values.iter_mut().zip(sums) {
            col.push(s / batch.n_rows() as f64);
        }
        series.timestamps.push(*t);
    }
    Ok(series)
}

/// Scores, flags and attributions for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAudit {
    pub level: String,
    pub threshold: f64,
    pub row_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    /// One record per flagged row, in row order.
    pub records: Vec<AttributionRecord>,
}

impl LevelAudit {
    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

/// Audit report across levels, finest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditReport {
    pub levels: Vec<LevelAudit>,
}

/// Scores `x`, flags rows above the model threshold and attributes each flagged row.
pub fn audit_level(
    model: &LevelModel,
    x: &FeatureMatrix,
    stats: &ProjectionStats,
    opts: &AttributionOptions,
) -> Result<LevelAudit> {
    let scores = model::score(model, x)?;
    let flags = model::flag(&scores, model.threshold)?;
    let flagged: Vec<usize> = (0..x.n_rows()).filter(|&i| flags[i]).collect();
    let records = attribute_rows(model, &x.select_rows(&flagged)?, stats, opts)?;
    Ok(LevelAudit {
        level: model.level_name.clone(),
        threshold: model.threshold,
        row_ids: x.row_ids().to_vec(),
        scores,
        flags,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit, FitConfig};

    fn model(rank: usize) -> LevelModel {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64;
                vec![
                    t.sin() * 3.0,
                    t.cos(),
                    (0.3 * t).sin() * 2.0,
                    0.1 * (1.7 * t).cos(),
                ]
            })
            .collect();
        fit(
            "lvl",
            &FeatureMatrix::from_rows(&rows).unwrap(),
            &FitConfig::fixed_rank(rank),
        )
        .unwrap()
    }

    fn offset(m: &LevelModel, coeffs: &[f64]) -> Vec<f64> {
        m.lift(coeffs)
    }

    #[test]
    fn projections_of_mean_and_basis_vectors() {
        let m = model(3);
        let p = projection_scores(&m, &m.col_means).unwrap();
        assert!(p.iter().all(|x| x.abs() < 1e-12));
        let p = projection_scores(&m, &offset(&m, &[1.0, 0.0, 0.0])).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
        let p = projection_scores(&m, &offset(&m, &[2.0, 3.0, 0.0])).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 3.0).abs() < 1e-12 && p[2].abs() < 1e-12);
        assert!(matches!(
            projection_scores(&m, &[1.0]),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn spectrum_stats_match_training_projections() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64;
                vec![
                    t.sin() * 3.0,
                    t.cos(),
                    (0.3 * t).sin() * 2.0,
                    0.1 * (1.7 * t).cos(),
                ]
            })
            .collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let m = fit("lvl", &x, &FitConfig::fixed_rank(3)).unwrap();
        let direct = reference_stats(&m, &x).unwrap();
        let derived = stats_from_spectrum(&m, 20).unwrap();
        for j in 0..3 {
            assert!(direct.mean[j].abs() < 1e-12);
            assert!((direct.std[j] - derived.std[j]).abs() < 1e-12);
        }
        assert!(stats_from_spectrum(&m, 0).is_err());
    }

    #[test]
    fn single_row_reference_has_zero_std() {
        let m = model(2);
        let one = FeatureMatrix::new(
            vec!["a".into()],
            m.feature_names.clone(),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let stats = reference_stats(&m, &one).unwrap();
        assert_eq!(stats.std, vec![0.0, 0.0]);
    }

    #[test]
    fn dominant_mode_rules() {
        let stats = ProjectionStats {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
        };
        assert_eq!(dominant_mode(&[10.0, 0.0], &stats, 3.0), Some((0, 10.0)));
        assert_eq!(dominant_mode(&[0.5, -0.9], &stats, 3.0), None);
        assert_eq!(dominant_mode(&[-5.0, 5.0], &stats, 3.0), Some((0, 5.0)));
        let degenerate = ProjectionStats {
            mean: vec![0.0, 1.0],
            std: vec![1.0, 0.0],
        };
        let (j, z) = dominant_mode(&[2.0, 1.5], &degenerate, 3.0).unwrap();
        assert_eq!(j, 1);
        assert!(z.is_infinite());
        assert_eq!(z_scores(&[0.0, 1.0], &degenerate), vec![0.0, 0.0]);
    }

    #[test]
    fn top_feature_ordering() {
        let mut m = model(1);
        m.basis[0] = vec![0.9, 0.1, 0.42, -0.05];
        let top = top_features(&m, 0, 1).unwrap();
        assert_eq!(top[0].0, "f0");
        let all: Vec<String> = top_features(&m, 0, 4)
            .unwrap()
            .into_iter()
            .map(|f| f.0)
            .collect();
        assert_eq!(all, vec!["f0", "f2", "f1", "f3"]);
        m.basis[0] = vec![0.5, -0.5, 0.5, 0.5];
        let tied: Vec<String> = top_features(&m, 0, 4)
            .unwrap()
            .into_iter()
            .map(|f| f.0)
            .collect();
        assert_eq!(tied, vec!["f0", "f1", "f2", "f3"]);
        assert!(matches!(
            top_features(&m, 1, 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn reconstruction_round_trip() {
        let m = model(2);
        assert_eq!(
            reconstruct_from_modes(&m, &[0.0, 0.0]).unwrap(),
            m.col_means
        );
        let row = offset(&m, &[4.0, 0.0]);
        let back = reconstruct_from_modes(&m, &projection_scores(&m, &row).unwrap()).unwrap();
        assert!(row.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn reconstruction_drops_orthogonal_part() {
        let m = model(1);
        let u = &m.basis[0];
        let e = [0.0, 0.0, 0.0, 1.0];
        let c = linalg::dot(&e, u);
        let v: Vec<f64> = e.iter().zip(u).map(|(a, b)| 3.0 * (a - c * b)).collect();
        let row: Vec<f64> = offset(&m, &[1.5])
            .iter()
            .zip(&v)
            .map(|(a, b)| a + b)
            .collect();
        let back = reconstruct_from_modes(&m, &projection_scores(&m, &row).unwrap()).unwrap();
        for i in 0..4 {
            assert!((row[i] - v[i] - back[i]).abs() < 1e-9);
        }
    }

    fn at(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(secs, 0).unwrap()
    }

    fn record(t: i64) -> AttributionRecord {
        AttributionRecord {
            row_id: "r".into(),
            timestamp: Some(at(t)),
            score: 1.0,
            projections: vec![5.0],
            z_scores: vec![5.0],
            dominant_mode: Some(0),
            top_features: vec![("f2".into(), 0.9)],
            residual_features: vec![("f1".into(), 0.4)],
            annotation_tag: String::new(),
        }
    }

    #[test]
    fn annotation_window() {
        let events = vec![
            ChangeLogEvent {
                timestamp: at(95),
                description: "deploy A".into(),
            },
            ChangeLogEvent {
                timestamp: at(200),
                description: "deploy B".into(),
            },
        ];
        let mut recs = vec![record(100)];
        annotate(&mut recs, &events, Duration::seconds(10)).unwrap();
        assert_eq!(
            recs[0].annotation_tag,
            "mode 0 / feature f2; near change: deploy A"
        );

        annotate(&mut recs, &[], Duration::seconds(10)).unwrap();
        assert_eq!(recs[0].annotation_tag, "mode 0 / feature f2");

        let two = vec![
            ChangeLogEvent {
                timestamp: at(92),
                description: "old".into(),
            },
            ChangeLogEvent {
                timestamp: at(98),
                description: "new".into(),
            },
        ];
        annotate(&mut recs, &two, Duration::seconds(10)).unwrap();
        assert!(recs[0].annotation_tag.ends_with("near change: new"));

        let mut residual_only = vec![AttributionRecord {
            dominant_mode: None,
            top_features: vec![],
            ..record(100)
        }];
        annotate(&mut residual_only, &[], Duration::seconds(10)).unwrap();
        assert_eq!(residual_only[0].annotation_tag, "residual / feature f1");

        let unsorted = vec![two[1].clone(), two[0].clone()];
        assert!(annotate(&mut recs, &unsorted, Duration::seconds(10)).is_err());
    }

    #[test]
    fn series_behaviour() {
        let m = model(2);
        let base = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            m.feature_names.clone(),
            [m.col_means.clone(), m.col_means.clone()].concat(),
        )
        .unwrap();
        let shifted = base.with_values([offset(&m, &[6.0, 0.0]), offset(&m, &[6.0, 0.0])].concat());
        let empty = FeatureMatrix::new(vec![], m.feature_names.clone(), vec![]).unwrap();
        let s = projection_series(
            &m,
            &[
                (at(0), base.clone()),
                (at(1), shifted),
                (at(2), empty),
                (at(3), base),
            ],
        )
        .unwrap();
        assert_eq!(s.timestamps, vec![at(0), at(1), at(3)]);
        assert_eq!(s.skipped, vec![at(2)]);
        assert!((s.values[0][1] - s.values[0][0] - 6.0).abs() < 1e-9);
        assert!(s.values[1].iter().all(|v| v.abs() < 1e-9));
        assert_eq!(projection_series(&m, &[]).unwrap().timestamps.len(), 0);
    }
}

//! Seeded synthetic hierarchies: low-rank clean data, additive-noise anomaly
//! injection at the finest level, and rollup into train/test level chains.
//!
//! Train and test data share one random projection `W` and differ in their
//! row factors and jitter. Every random draw comes from a ChaCha8 generator
//! keyed by [`GenConfig::seed`]:
//!
//! | draws                            | key        | stream |
//! |----------------------------------|------------|--------|
//! | projection `W`                   | `seed`     | 1      |
//! | clean training rows `G`, `E`     | `seed`     | 0      |
//! | clean test rows `G`, `E`         | `seed + 1` | 0      |
//! | anomaly injection                | `seed + 2` | 0      |

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{build_level_chain, HierarchySpec, LevelDataset};
use crate::matrix::{default_names, FeatureMatrix};
use crate::model::mean_and_population_std;

pub const TEST_SEED_OFFSET: u64 = 1;
pub const INJECTION_SEED_OFFSET: u64 = 2;
const SAMPLE_STREAM: u64 = 0;
const PROJECTION_STREAM: u64 = 1;

fn rng(key: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_base_rows: usize,
    pub n_features: usize,
    pub true_rank: usize,
    /// Std of the Gaussian jitter added to clean data.
    pub noise_floor_std: f64,
    pub anomaly_fraction: f64,
    /// Anomaly noise std, as a multiple of each column's clean std.
    pub anomaly_magnitude: f64,
    /// Fraction of features corrupted in each anomalous row.
    pub affected_feature_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_base_rows: 625,
            n_features: 10,
            true_rank: 1,
            noise_floor_std: 0.01,
            anomaly_fraction: 0.1,
            anomaly_magnitude: 5.0,
            affected_feature_fraction: 1.0,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid_config(msg));
        if self.n_base_rows == 0 || self.n_features == 0 {
            return bad("n_base_rows and n_features must be positive".into());
        }
        if self.true_rank == 0 || self.true_rank > self.n_base_rows.min(self.n_features) {
            return bad(format!(
                "true_rank {} outside 1..={}",
                self.true_rank,
                self.n_base_rows.min(self.n_features)
            ));
        }
        if !(self.noise_floor_std >= 0.0 && self.noise_floor_std.is_finite()) {
            return bad(format!(
                "noise_floor_std {} must be >= 0",
                self.noise_floor_std
            ));
        }
        if !(0.0..1.0).contains(&self.anomaly_fraction) {
            return bad(format!(
                "anomaly_fraction {} outside [0, 1)",
                self.anomaly_fraction
            ));
        }
        if !(self.anomaly_magnitude > 0.0 && self.anomaly_magnitude.is_finite()) {
            return bad(format!(
                "anomaly_magnitude {} must be > 0",
                self.anomaly_magnitude
            ));
        }
        if !(self.affected_feature_fraction > 0.0 && self.affected_feature_fraction <= 1.0) {
            return bad(format!(
                "affected_feature_fraction {} outside (0, 1]",
                self.affected_feature_fraction
            ));
        }
        Ok(())
    }
}

/// `G·W + E` with standard normal `G` (n×r), `W` (r×d) and `E ~ N(0, noise_floor_std²)`.
///
/// This is the training draw; see [`generate_clean_rows`] for further draws
/// from the same subspace.
pub fn generate_clean(cfg: &GenConfig) -> Result<FeatureMatrix> {
    generate_clean_rows(cfg, cfg.seed)
}

/// Like [`generate_clean`], with `G` and `E` drawn under `row_seed` while the
/// projection `W` still comes from `cfg.seed`.
pub fn generate_clean_rows(cfg: &GenConfig, row_seed: u64) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let (n, d, r) = (cfg.n_base_rows, cfg.n_features, cfg.true_rank);
    let mut projection_rng = rng(cfg.seed, PROJECTION_STREAM);
    let w: Vec<f64> = (0..r * d)
        .map(|_| projection_rng.sample(StandardNormal))
        .collect();

    let mut row_rng = rng(row_seed, SAMPLE_STREAM);
    let mut normal = || -> f64 { row_rng.sample(StandardNormal) };
    let g: Vec<f64> = (0..n * r).map(|_| normal()).collect();
    let mut values = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let signal: f64 = (0..r).map(|k| g[i * r + k] * w[k * d + j]).sum();
            values[i * d + j] = signal + cfg.noise_floor_std * normal();
        }
    }
    FeatureMatrix::new(default_names("r", n), default_names("f", d), values)
}

/// Output of [`inject_anomalies_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub corrupted: FeatureMatrix,
    pub labels: Vec<bool>,
    /// Corrupted feature indices per row (empty for clean rows), ascending.
    pub affected_features: Vec<Vec<usize>>,
}

/// Adds Gaussian noise to a random subset of rows. Returns the corrupted copy and labels.
pub fn inject_anomalies(x: &FeatureMatrix, cfg: &GenConfig) -> Result<(FeatureMatrix, Vec<bool>)> {
    let inj = inject_anomalies_detailed(x, cfg)?;
    Ok((inj.corrupted, inj.labels))
}

/// Selects `round(anomaly_fraction * n)` rows without replacement; in each,
/// `round(affected_feature_fraction * d)` features (at least one) get
/// additive noise with std `anomaly_magnitude` times that column's clean std.
pub fn inject_anomalies_detailed(x: &FeatureMatrix, cfg: &GenConfig) -> Result<Injection> {
    cfg.validate()?;
    let (n, d) = (x.n_rows(), x.n_cols());
    let k = (cfg.anomaly_fraction * n as f64).round() as usize;
    if n > 0 && k >= n {
        return Err(Error::invalid_config(format!(
            "anomaly_fraction {} would corrupt all {n} rows",
            cfg.anomaly_fraction
        )));
    }
    let m = ((cfg.affected_feature_fraction * d as f64).round() as usize).clamp(1, d.max(1));
    let col_std: Vec<f64> = (0..d)
        .map(|j| mean_and_population_std(&x.column(j)).1)
        .collect();

    let mut rng = rng(cfg.seed.wrapping_add(INJECTION_SEED_OFFSET), SAMPLE_STREAM);
    let mut rows = index::sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();

    let mut values = x.values().to_vec();
    let mut labels = vec![false; n];
    let mut affected_features = vec![Vec::new(); n];
    for &i in &rows {
        labels[i] = true;
        let mut features = index::sample(&mut rng, d, m).into_vec();
        features.sort_unstable();
        for &j in &features {
            let z: f64 = rng.sample(StandardNormal);
            values[i * d + j] += cfg.anomaly_magnitude * col_std[j] * z;
        }
        affected_features[i] = features;
    }
    let corrupted = FeatureMatrix::new(x.row_ids().to_vec(), x.col_names().to_vec(), values)?;
    Ok(Injection {
        corrupted,
        labels,
        affected_features,
    })
}

/// Train and test level chains for one synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Clean data, labels all false.
    pub train: Vec<LevelDataset>,
    /// Independently drawn clean data with anomalies injected at the finest level.
    pub test: Vec<LevelDataset>,
    /// Corrupted features per finest-level test row.
    pub injected_features: Vec<Vec<usize>>,
}

pub fn generate_experiment(cfg: &GenConfig, spec: &HierarchySpec) -> Result<Experiment> {
    cfg.validate()?;
    spec.validate()?;
    if !cfg.n_base_rows.is_multiple_of(spec.total_fan_out()) {
        return Err(Error::shape(format!(
            "{} base rows are not divisible by the total fan-out {}",
            cfg.n_base_rows,
            spec.total_fan_out()
        )));
    }
    let base_level = &spec.levels[0];
    let relabel = |x: FeatureMatrix| {
        let ids = (0..x.n_rows())
            .map(|i| format!("{base_level}-{i}"))
            .collect();
        FeatureMatrix::new(ids, x.col_names().to_vec(), x.values().to_vec())
    };

    let train_x = relabel(generate_clean(cfg)?)?;
    let n = train_x.n_rows();
    let train_base = LevelDataset::new(base_level.clone(), train_x, Some(vec![false; n]))?;

    let test_clean = relabel(generate_clean_rows(
        cfg,
        cfg.seed.wrapping_add(TEST_SEED_OFFSET),
    )?)?;
    let inj = inject_anomalies_detailed(&test_clean, cfg)?;
    let test_base = LevelDataset::new(base_level.clone(), inj.corrupted, Some(inj.labels))?;

    Ok(Experiment {
        train: build_level_chain(train_base, spec)?,
        test: build_level_chain(test_base, spec)?,
        injected_features: inj.affected_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn small(noise: f64, rank: usize) -> GenConfig {
        GenConfig {
            n_base_rows: 40,
            n_features: 6,
            true_rank: rank,
            noise_floor_std: noise,
            ..GenConfig::default()
        }
    }

    #[test]
    fn noiseless_rank_is_exact() {
        for rank in [1, 2] {
            let x = generate_clean(&small(0.0, rank)).unwrap();
            let sv = linalg::singular_values(&x).unwrap();
            assert!(sv[rank - 1] > 1e-3 * sv[0]);
            assert!(sv[rank] / sv[0] < 1e-10, "{sv:?}");
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_clean(&GenConfig::default()).unwrap();
        let b = generate_clean(&GenConfig::default()).unwrap();
        assert_eq!(a.values(), b.values());
        let c = generate_clean(&GenConfig {
            seed: 43,
            ..GenConfig::default()
        })
        .unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn injection_counts() {
        let cfg = GenConfig {
            n_base_rows: 100,
            ..GenConfig::default()
        };
        let x = generate_clean(&cfg).unwrap();
        let (y, labels) = inject_anomalies(&x, &cfg).unwrap();
        assert_eq!(labels.iter().filter(|b| **b).count(), 10);
        for (i, lab) in labels.iter().enumerate() {
            assert_eq!(x.row(i) != y.row(i), *lab);
        }

        let none = GenConfig {
            anomaly_fraction: 0.0,
            ..cfg.clone()
        };
        let (y, labels) = inject_anomalies(&x, &none).unwrap();
        assert_eq!(y, x);
        assert!(labels.iter().all(|b| !b));
    }

    #[test]
    fn affected_feature_subset_size() {
        let cfg = GenConfig {
            affected_feature_fraction: 0.3,
            ..GenConfig::default()
        };
        let x = generate_clean(&cfg).unwrap();
        let inj = inject_anomalies_detailed(&x, &cfg).unwrap();
        for (i, feats) in inj.affected_features.iter().enumerate() {
            assert_eq!(feats.len(), if inj.labels[i] { 3 } else { 0 });
            for j in 0..10 {
                let changed = x.get(i, j) != inj.corrupted.get(i, j);
                assert_eq!(changed, feats.contains(&j));
            }
        }
    }

    #[test]
    fn fraction_rounding_to_all_rows_is_rejected() {
        let cfg = GenConfig {
            n_base_rows: 1,
            n_features: 3,
            anomaly_fraction: 0.9,
            ..GenConfig::default()
        };
        let x = generate_clean(&cfg).unwrap();
        assert!(matches!(
            inject_anomalies(&x, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            GenConfig {
                true_rank: 0,
                ..GenConfig::default()
            },
            GenConfig {
                true_rank: 11,
                ..GenConfig::default()
            },
            GenConfig {
                anomaly_fraction: 1.0,
                ..GenConfig::default()
            },
            GenConfig {
                anomaly_magnitude: 0.0,
                ..GenConfig::default()
            },
            GenConfig {
                affected_feature_fraction: 0.0,
                ..GenConfig::default()
            },
            GenConfig {
                noise_floor_std: -1.0,
                ..GenConfig::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(generate_clean(&cfg), Err(Error::InvalidConfig(_))),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn experiment_shapes_and_labels() {
        let exp = generate_experiment(&GenConfig::default(), &HierarchySpec::default()).unwrap();
        let rows: Vec<usize> = exp.test.iter().map(|l| l.matrix.n_rows()).collect();
        assert_eq!(rows, vec![625, 125, 25, 5]);
        assert_eq!(
            exp.train
                .iter()
                .map(|l| l.matrix.n_rows())
                .collect::<Vec<_>>(),
            rows
        );
        assert!(exp.train.iter().all(|l| l.positives() == 0));
        assert_eq!(exp.test[0].positives(), 63);
        assert_ne!(exp.train[0].matrix.values(), exp.test[0].matrix.values());

        let clean = GenConfig {
            anomaly_fraction: 0.0,
            ..GenConfig::default()
        };
        let exp = generate_experiment(&clean, &HierarchySpec::default()).unwrap();
        assert!(exp.test.iter().all(|l| l.positives() == 0));

        let one = GenConfig {
            anomaly_fraction: 1.0 / 625.0,
            ..GenConfig::default()
        };
        let exp = generate_experiment(&one, &HierarchySpec::default()).unwrap();
        assert!(exp.test.iter().all(|l| l.positives() == 1));
    }

    #[test]
    fn experiment_rejects_bad_divisibility() {
        let cfg = GenConfig {
            n_base_rows: 600,
            ..GenConfig::default()
        };
        assert!(matches!(
            generate_experiment(&cfg, &HierarchySpec::default()),
            Err(Error::Shape(_))
        ));
    }
}

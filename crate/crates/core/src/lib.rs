//! Per-level low-rank plus sparse decomposition for auditing data that flows
//! through a hierarchy of aggregations.
//!
//! Each level of the hierarchy gets its own [`model::LevelModel`], fitted on
//! clean rows. New rows are split into a low-rank part and a residual, and
//! rows whose residual norm exceeds the level's threshold are flagged.
//!
//! ```
//! use hrpca::model::{fit, flag, score, FitConfig};
//! use hrpca::FeatureMatrix;
//!
//! let train = FeatureMatrix::from_rows(&[
//!     vec![1.0, 2.0],
//!     vec![2.0, 4.1],
//!     vec![3.0, 5.9],
//!     vec![4.0, 8.0],
//! ])?;
//! let model = fit("daily", &train, &FitConfig::fixed_rank(1))?;
//! let batch = FeatureMatrix::from_rows(&[vec![5.0, 10.0], vec![5.0, -3.0]])?;
//! let flags = flag(&score(&model, &batch)?, model.threshold)?;
//! assert_eq!(flags, vec![false, true]);
//! # Ok::<(), hrpca::Error>(())
//! ```
//!
//! The guide in `book/` walks through every stage; its code blocks run as
//! doc-tests of this crate.

pub mod attribution;
pub mod csvio;
pub mod error;
pub mod hierarchy;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod report;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::FeatureMatrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/hierarchy.md")]
    mod hierarchy {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! PCA channel reduction ahead of a vanilla transformer forecaster.
//!
//! The pipeline reduces the non-target channels of a multivariate series with
//! PCA, splits the result chronologically, standardizes it with train-split
//! statistics, cuts supervised windows and trains an encoder-decoder
//! transformer to forecast the target. [`harness`] runs component-count sweeps
//! and consolidates accuracy and runtime into reduction tables.

pub mod analysis;
pub mod dataset;
pub mod forecaster;
pub mod harness;
pub mod numeric;
pub mod pca;

pub use numeric::{Matrix, SeededRng};

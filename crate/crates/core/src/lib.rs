//! Multi-output conformal prediction regions for landmark localization.
//!
//! A model's per-landmark heatmaps (or point estimates with an uncertainty)
//! are turned into prediction regions with finite-sample coverage.

// `!(x > 0.0)` is the NaN-rejecting check used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibrate;
pub mod cli;
pub mod density;
pub mod error;
pub mod eval;
pub mod export;
pub mod grid;
pub mod io;
pub mod json_float;
pub mod linalg;
pub mod region;
pub mod synthetic;

pub use calibrate::{Calibrator, CalibratorConfig, CalibratorSet, Method, Prediction};
pub use error::{Error, Result};
pub use grid::{GridDistribution, GridGeometry};
pub use io::{Dataset, Example};
pub use region::{AffineMap, GridMask, PredictionRegion};

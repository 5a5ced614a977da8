//! Point predictions and covariance estimates drawn from an [`Example`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density;
use crate::error::{Error, Result};
use crate::io::Example;
use crate::linalg::{self, SCALE_FLOOR};

/// Where the point prediction ŷ comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    /// `point`, else the sample mean, else the grid's weighted mean.
    #[default]
    Auto,
    Point,
    SampleMean,
    GridMean,
}

/// Where the predictive covariance Σ̂ (and per-axis û) comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintySource {
    /// `samples`, else `covariance`. The grid is used only when asked for.
    #[default]
    Auto,
    Samples,
    Covariance,
    Grid,
}

fn missing(method: &str, field: &'static str, ex: &Example) -> Error {
    Error::MissingField {
        method: method.to_string(),
        field,
        id: ex.id.clone(),
    }
}

/// Weighted mean and covariance of the grid, in the native frame.
fn grid_moments(ex: &Example, method: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let grid = ex.grid.as_ref().ok_or_else(|| missing(method, "grid", ex))?;
    let (mean, cov) = density::fit_gaussian(grid)?;
    Ok(match &ex.native_map {
        Some(m) => (m.apply(&mean), m.transform_covariance(&cov)),
        None => (mean, cov),
    })
}

pub fn point_prediction(ex: &Example, source: PointSource, method: &str) -> Result<Vec<f64>> {
    match source {
        PointSource::Point => ex.point.clone().ok_or_else(|| missing(method, "point", ex)),
        PointSource::SampleMean => ex
            .samples
            .as_deref()
            .map(linalg::mean)
            .ok_or_else(|| missing(method, "samples", ex)),
        PointSource::GridMean => Ok(grid_moments(ex, method)?.0),
        PointSource::Auto => {
            if let Some(p) = &ex.point {
                Ok(p.clone())
            } else if let Some(s) = &ex.samples {
                Ok(linalg::mean(s))
            } else if ex.grid.is_some() {
                Ok(grid_moments(ex, method)?.0)
            } else {
                Err(missing(method, "point, samples or grid", ex))
            }
        }
    }
}

/// Covariance of a sample set; isotropic mean-squared deviation when there
/// are fewer than `d + 1` draws. The flag reports the fallback.
pub fn samples_covariance(samples: &[Vec<f64>]) -> (DMatrix<f64>, bool) {
    let d = samples[0].len();
    if samples.len() < d + 1 {
        (linalg::isotropic_covariance(samples), true)
    } else {
        (
            linalg::sample_covariance(samples).expect("at least two samples"),
            false,
        )
    }
}

/// Raw (unregularized) predictive covariance.
pub fn covariance(ex: &Example, source: UncertaintySource, method: &str) -> Result<DMatrix<f64>> {
    let from_samples = |s: &Vec<Vec<f64>>| samples_covariance(s).0;
    match source {
        UncertaintySource::Samples => ex
            .samples
            .as_ref()
            .map(from_samples)
            .ok_or_else(|| missing(method, "samples", ex)),
        UncertaintySource::Covariance => ex
            .covariance
            .as_deref()
            .map(linalg::to_matrix)
            .ok_or_else(|| missing(method, "covariance", ex)),
        UncertaintySource::Grid => Ok(linalg::to_matrix(&grid_moments(ex, method)?.1)),
        UncertaintySource::Auto => {
            if let Some(s) = &ex.samples {
                Ok(from_samples(s))
            } else if let Some(c) = &ex.covariance {
                Ok(linalg::to_matrix(c))
            } else {
                Err(missing(method, "samples or covariance", ex))
            }
        }
    }
}

/// Per-axis standard deviations, floored at [`SCALE_FLOOR`].
pub fn axis_scales(cov: &DMatrix<f64>) -> Vec<f64> {
    (0..cov.nrows())
        .map(|j| cov[(j, j)].max(0.0).sqrt().max(SCALE_FLOOR))
        .collect()
}

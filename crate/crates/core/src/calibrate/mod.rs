//! Conformal and baseline region predictors sharing one
//! `fit(calibration) → predict(example, α)` contract.
//!
//! Fitted state never depends on α: ledgers hold every calibration score, and
//! the threshold `S*_{⌊α(m+1)⌋}` is taken at prediction time.
//!
//! | method            | score                                   | region     |
//! |-------------------|-----------------------------------------|------------|
//! | `bonferroni`      | per-axis `|y_j − ŷ_j| / û_j`, α/d       | box        |
//! | `sidak`           | as above, `1 − (1−α)^{1/d}`             | box        |
//! | `max_nonconf`     | `max_j |y_j − ŷ_j| / û_j`               | box        |
//! | `ellipsoidal`     | Mahalanobis distance under Σ̂            | ellipsoid  |
//! | `m_r2ccp`         | `−f̂(y)`, multilinear heatmap density    | cell mask  |
//! | `m_r2c2r_std`     | `1 − p̂(bin(y))`                         | bin mask   |
//! | `m_r2c2r_aps`     | APS cumulative mass over bins           | bin mask   |
//! | `naive_r2cr`      | none: top cells until mass ≥ 1 − α      | cell mask  |
//! | `gaussian_sample` | none: χ² ellipsoid from sample moments  | ellipsoid  |

pub mod aps;
pub mod ledger;
pub mod uncertainty;

use std::collections::BTreeMap;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{self, Temperature};
use crate::error::{check_alpha, check_dims, Error, Result};
use crate::grid::GridDistribution;
use crate::io::Example;
use crate::linalg;
use crate::region::{bins_to_region, GridMask, PredictionRegion};

pub use aps::{aps_score, aps_set};
pub use ledger::{conformal_threshold, threshold_rank, ScoreLedger};
pub use uncertainty::{PointSource, UncertaintySource};

/// Mass shortfall tolerated when the naive region accumulates to `1 − α`.
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bonferroni,
    Sidak,
    MaxNonconf,
    Ellipsoidal,
    #[serde(rename = "m_r2ccp")]
    MR2ccp,
    #[serde(rename = "m_r2c2r_std")]
    MR2c2rStd,
    #[serde(rename = "m_r2c2r_aps")]
    MR2c2rAps,
    #[serde(rename = "naive_r2cr")]
    NaiveR2cr,
    GaussianSample,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Bonferroni,
        Method::Sidak,
        Method::MaxNonconf,
        Method::Ellipsoidal,
        Method::MR2ccp,
        Method::MR2c2rStd,
        Method::MR2c2rAps,
        Method::NaiveR2cr,
        Method::GaussianSample,
    ];

    /// Methods carrying a finite-sample coverage guarantee.
    pub const CONFORMAL: [Method; 7] = [
        Method::Bonferroni,
        Method::Sidak,
        Method::MaxNonconf,
        Method::Ellipsoidal,
        Method::MR2ccp,
        Method::MR2c2rStd,
        Method::MR2c2rAps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bonferroni => "bonferroni",
            Method::Sidak => "sidak",
            Method::MaxNonconf => "max_nonconf",
            Method::Ellipsoidal => "ellipsoidal",
            Method::MR2ccp => "m_r2ccp",
            Method::MR2c2rStd => "m_r2c2r_std",
            Method::MR2c2rAps => "m_r2c2r_aps",
            Method::NaiveR2cr => "naive_r2cr",
            Method::GaussianSample => "gaussian_sample",
        }
    }

    pub fn is_conformal(self) -> bool {
        !matches!(self, Method::NaiveR2cr | Method::GaussianSample)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibratorConfig {
    pub point: PointSource,
    pub uncertainty: UncertaintySource,
    /// Grid cells per bin along each axis (M-R2C2R). `None` picks the
    /// largest of 4, 2, 1 dividing each axis.
    pub bin_factor: Option<Vec<usize>>,
    /// Randomized APS inclusion, drawn from `seed` and the example id.
    pub randomized: bool,
    pub seed: u64,
    /// Fit a temperature on the calibration set (naive baseline).
    pub temperature: bool,
}

impl Default for CalibratorConfig {
    fn default() -> Self {
        CalibratorConfig {
            point: PointSource::Auto,
            uncertainty: UncertaintySource::Auto,
            bin_factor: None,
            randomized: false,
            seed: 0,
            temperature: false,
        }
    }
}

/// Region plus the thresholds that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub region: PredictionRegion,
    pub thresholds: Vec<f64>,
    pub flags: Vec<String>,
}

/// A fitted method. Immutable; `predict` is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub method: Method,
    pub dims: usize,
    pub config: CalibratorConfig,
    pub ledgers: Vec<ScoreLedger>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<Temperature>,
}

fn need<'a, T>(field: Option<&'a T>, name: &'static str, method: Method, ex: &Example) -> Result<&'a T> {
    field.ok_or_else(|| Error::MissingField {
        method: method.name().to_string(),
        field: name,
        id: ex.id.clone(),
    })
}

/// FNV-1a, used to give every example id its own reproducible stream.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn default_bin_factor(shape: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .map(|&n| [4, 2, 1].into_iter().find(|f| n % f == 0).unwrap_or(1))
        .collect()
}

impl Calibrator {
    /// Scores every calibration example and stores the ledgers.
    pub fn fit(method: Method, cal: &[Example], config: CalibratorConfig) -> Result<Calibrator> {
        let first = cal.first().ok_or(Error::EmptyCalibrationSet)?;
        let dims = first.dims();
        for ex in cal {
            check_dims(dims, ex.dims())?;
        }
        let mut calibrator = Calibrator {
            method,
            dims,
            config,
            ledgers: Vec::new(),
            temperature: None,
        };
        match method {
            Method::Bonferroni | Method::Sidak => {
                let mut per_axis = vec![Vec::with_capacity(cal.len()); dims];
                for ex in cal {
                    for (j, s) in calibrator.axis_scores(ex)?.into_iter().enumerate() {
                        per_axis[j].push(s);
                    }
                }
                calibrator.ledgers = per_axis.into_iter().map(ScoreLedger::from_scores).collect();
            }
            Method::NaiveR2cr => {
                if calibrator.config.temperature {
                    calibrator.temperature = Some(density::fit_temperature(cal)?);
                }
            }
            Method::GaussianSample => {
                for ex in cal {
                    need(ex.samples.as_ref(), "samples", method, ex)?;
                }
            }
            _ => {
                let scores = cal
                    .iter()
                    .map(|ex| calibrator.score(ex))
                    .collect::<Result<Vec<_>>>()?;
                calibrator.ledgers = vec![ScoreLedger::from_scores(scores)];
            }
        }
        Ok(calibrator)
    }

    fn method_name(&self) -> &'static str {
        self.method.name()
    }

    fn axis_frame(&self, ex: &Example) -> Result<(Vec<f64>, Vec<f64>)> {
        let point = uncertainty::point_prediction(ex, self.config.point, self.method_name())?;
        let cov = uncertainty::covariance(ex, self.config.uncertainty, self.method_name())?;
        Ok((point, uncertainty::axis_scales(&cov)))
    }

    fn axis_scores(&self, ex: &Example) -> Result<Vec<f64>> {
        let (point, scale) = self.axis_frame(ex)?;
        Ok((0..self.dims)
            .map(|j| (ex.truth[j] - point[j]).abs() / scale[j])
            .collect())
    }

    fn ellipsoid_frame(&self, ex: &Example) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let point = uncertainty::point_prediction(ex, self.config.point, self.method_name())?;
        let cov = uncertainty::covariance(ex, self.config.uncertainty, self.method_name())?;
        Ok((point, linalg::regularize(&cov)))
    }

    fn bin_grid(&self, grid: &GridDistribution) -> Result<GridDistribution> {
        let factor = match &self.config.bin_factor {
            Some(f) => f.clone(),
            None => default_bin_factor(&grid.geometry().shape),
        };
        grid.coarsen(&factor)
    }

    fn example_seed(&self, ex: &Example) -> u64 {
        self.config.seed ^ id_hash(&ex.id)
    }

    fn aps_draw(&self, ex: &Example) -> Option<f64> {
        self.config
            .randomized
            .then(|| aps::uniform_from_seed(self.example_seed(ex)))
    }

    /// Nonconformity score of a single (non per-axis) method at the truth.
    pub fn score(&self, ex: &Example) -> Result<f64> {
        check_dims(self.dims, ex.dims())?;
        match self.method {
            Method::Bonferroni | Method::Sidak => Err(Error::config(
                "method",
                "per-axis methods score through axis ledgers",
            )),
            Method::MaxNonconf => Ok(self
                .axis_scores(ex)?
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)),
            Method::Ellipsoidal => {
                let (point, cov) = self.ellipsoid_frame(ex)?;
                let r: Vec<f64> = ex.truth.iter().zip(&point).map(|(a, b)| a - b).collect();
                linalg::mahalanobis(&r, &cov)
            }
            Method::MR2ccp => {
                let grid = need(ex.grid.as_ref(), "grid", self.method, ex)?;
                match density::score_density(grid, &ex.truth_in_grid_frame()) {
                    Ok(s) => Ok(s),
                    // no heatmap mass outside the image
                    Err(Error::OutOfDomain(_)) => Ok(0.0),
                    Err(e) => Err(e),
                }
            }
            Method::MR2c2rStd | Method::MR2c2rAps => {
                let grid = need(ex.grid.as_ref(), "grid", self.method, ex)?;
                let bins = self.bin_grid(grid)?;
                let geo = bins.geometry();
                let target = geo
                    .cell_of(&ex.truth_in_grid_frame())
                    .map(|c| geo.flat_index(&c))
                    .transpose()?;
                Ok(match (self.method, target) {
                    (_, None) => 1.0,
                    (Method::MR2c2rStd, Some(t)) => 1.0 - bins.values()[t],
                    (_, Some(t)) => aps::aps_score(&bins, t, self.aps_draw(ex)),
                })
            }
            Method::NaiveR2cr | Method::GaussianSample => Err(Error::config(
                "method",
                format!("{} has no nonconformity score", self.method),
            )),
        }
    }

    fn threshold(&self, ledger: usize, alpha: f64) -> Result<f64> {
        conformal_threshold(&self.ledgers[ledger], alpha)
    }

    fn to_native(&self, ex: &Example, region: PredictionRegion) -> Result<PredictionRegion> {
        match &ex.native_map {
            Some(m) => region.transform(m),
            None => Ok(region),
        }
    }

    pub fn predict(&self, ex: &Example, alpha: f64) -> Result<PredictionRegion> {
        Ok(self.predict_full(ex, alpha)?.region)
    }

    pub fn predict_full(&self, ex: &Example, alpha: f64) -> Result<Prediction> {
        check_alpha(alpha)?;
        check_dims(self.dims, ex.dims())?;
        let d = self.dims;
        let mut flags = Vec::new();
        let (region, thresholds) = match self.method {
            Method::Bonferroni | Method::Sidak => {
                let alpha_t = if self.method == Method::Bonferroni {
                    alpha / d as f64
                } else {
                    1.0 - (1.0 - alpha).powf(1.0 / d as f64)
                };
                let q = (0..d)
                    .map(|j| self.threshold(j, alpha_t))
                    .collect::<Result<Vec<_>>>()?;
                let (center, scale) = self.axis_frame(ex)?;
                let half_widths = q.iter().zip(&scale).map(|(q, u)| q * u).collect();
                (PredictionRegion::HyperRect { center, half_widths }, q)
            }
            Method::MaxNonconf => {
                let q = self.threshold(0, alpha)?;
                let (center, scale) = self.axis_frame(ex)?;
                let half_widths = scale.iter().map(|u| q * u).collect();
                (PredictionRegion::HyperRect { center, half_widths }, vec![q])
            }
            Method::Ellipsoidal => {
                let q = self.threshold(0, alpha)?;
                let (center, cov) = self.ellipsoid_frame(ex)?;
                (
                    PredictionRegion::Ellipsoid {
                        center,
                        shape_matrix: linalg::to_rows(&cov),
                        radius: q,
                    },
                    vec![q],
                )
            }
            Method::MR2ccp => {
                let q = self.threshold(0, alpha)?;
                let grid = need(ex.grid.as_ref(), "grid", self.method, ex)?;
                // at a midpoint the interpolated density is the cell value
                let included = grid.values().iter().map(|p| -p <= q).collect();
                let mask = GridMask::new(grid.geometry().clone(), included)?;
                (self.to_native(ex, PredictionRegion::GridMask(mask))?, vec![q])
            }
            Method::MR2c2rStd | Method::MR2c2rAps => {
                let q = self.threshold(0, alpha)?;
                let grid = need(ex.grid.as_ref(), "grid", self.method, ex)?;
                let bins = self.bin_grid(grid)?;
                let geo = bins.geometry();
                let flat: Vec<usize> = if self.method == Method::MR2c2rStd {
                    (0..bins.len()).filter(|&b| 1.0 - bins.values()[b] <= q).collect()
                } else {
                    aps::aps_flat(&bins, q, self.aps_draw(ex))
                };
                let set = flat.into_iter().map(|f| geo.unravel(f)).collect();
                (self.to_native(ex, bins_to_region(geo, &set)?)?, vec![q])
            }
            Method::NaiveR2cr => {
                let grid = need(ex.grid.as_ref(), "grid", self.method, ex)?;
                let scaled;
                let grid = match self.temperature {
                    Some(t) => {
                        scaled = density::apply_temperature(grid, t);
                        &scaled
                    }
                    None => grid,
                };
                let target = 1.0 - alpha - MASS_TOLERANCE;
                let mut included = vec![false; grid.len()];
                let mut mass = 0.0;
                for cell in grid.order_desc() {
                    if mass >= target {
                        break;
                    }
                    included[cell] = true;
                    mass += grid.values()[cell];
                }
                let mask = GridMask::new(grid.geometry().clone(), included)?;
                (self.to_native(ex, PredictionRegion::GridMask(mask))?, vec![])
            }
            Method::GaussianSample => {
                let samples = need(ex.samples.as_ref(), "samples", self.method, ex)?;
                let (cov, fallback) = uncertainty::samples_covariance(samples);
                if fallback {
                    flags.push("isotropic_fallback".to_string());
                }
                let radius = linalg::chi2_quantile(1.0 - alpha, d).sqrt();
                (
                    PredictionRegion::Ellipsoid {
                        center: linalg::mean(samples),
                        shape_matrix: linalg::to_rows(&linalg::regularize(&cov)),
                        radius,
                    },
                    vec![radius],
                )
            }
        };
        Ok(Prediction {
            region,
            thresholds,
            flags,
        })
    }
}

/// One calibrator per landmark index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorSet {
    pub method: Method,
    /// All landmarks share the calibrator stored under key 0.
    #[serde(default)]
    pub pooled: bool,
    pub calibrators: BTreeMap<usize, Calibrator>,
}

impl CalibratorSet {
    /// Fits each landmark separately, or all examples as one group when
    /// `pooled`.
    pub fn fit(
        method: Method,
        cal: &[Example],
        config: CalibratorConfig,
        pooled: bool,
    ) -> Result<CalibratorSet> {
        if cal.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        let mut groups: BTreeMap<usize, Vec<Example>> = BTreeMap::new();
        for ex in cal {
            let key = if pooled { 0 } else { ex.landmark };
            groups.entry(key).or_default().push(ex.clone());
        }
        let calibrators = groups
            .into_iter()
            .map(|(k, exs)| Ok((k, Calibrator::fit(method, &exs, config.clone())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(CalibratorSet {
            method,
            pooled,
            calibrators,
        })
    }

    pub fn for_example(&self, ex: &Example) -> Result<&Calibrator> {
        let key = if self.pooled { 0 } else { ex.landmark };
        self.calibrators
            .get(&key)
            .ok_or_else(|| Error::IdMismatch(format!("no calibrator for landmark {}", ex.landmark)))
    }

    pub fn predict_full(&self, ex: &Example, alpha: f64) -> Result<Prediction> {
        self.for_example(ex)?.predict_full(ex, alpha)
    }
}

#[cfg(test)]
mod tests;

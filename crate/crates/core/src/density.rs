//! Quantities derived from a [`GridDistribution`]: multilinear density
//! interpolation, point decoding, moment fitting, heatmap averaging and
//! temperature scaling.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::{GridDistribution, GridGeometry};
use crate::io::Example;

/// Probabilities below this are floored before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Lower vertex index and its weight along one axis.
///
/// The weight of the lower vertex is `(Y[k+1] - y) / (Y[k+1] - Y[k])` with
/// `Y[k] <= y < Y[k+1]`; coordinates outside the midpoint hull are clamped to
/// the outermost midpoint. At a midpoint the weights are exactly 1 and 0.
fn axis_weight(geo: &GridGeometry, axis: usize, y: f64) -> (usize, f64) {
    let n = geo.shape[axis];
    if n == 1 {
        return (0, 1.0);
    }
    let first = geo.midpoint_coord(axis, 0);
    let last = geo.midpoint_coord(axis, n - 1);
    let y = y.clamp(first, last);
    let u = (y - geo.origin[axis]) / geo.spacing[axis];
    let mut k = (u.floor().max(0.0) as usize).min(n - 2);
    while k + 1 < n - 1 && y >= geo.midpoint_coord(axis, k + 1) {
        k += 1;
    }
    while k > 0 && y < geo.midpoint_coord(axis, k) {
        k -= 1;
    }
    let lo = geo.midpoint_coord(axis, k);
    let hi = geo.midpoint_coord(axis, k + 1);
    (k, (hi - y) / (hi - lo))
}

/// Multilinear interpolation of the cell probabilities at `y`.
///
/// Points between the outermost midpoints and the physical grid boundary
/// take the value at the nearest hull point; points beyond the physical
/// extent are [`Error::OutOfDomain`].
pub fn interp_density(grid: &GridDistribution, y: &[f64]) -> Result<f64> {
    let geo = grid.geometry();
    check_dims(geo.dims(), y.len())?;
    if !geo.in_extent(y) {
        return Err(Error::OutOfDomain(y.to_vec()));
    }
    let d = geo.dims();
    let strides = geo.strides();
    let axes: Vec<(usize, f64)> = (0..d).map(|j| axis_weight(geo, j, y[j])).collect();
    let values = grid.values();
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut flat = 0;
        for (j, &(k, w)) in axes.iter().enumerate() {
            let upper = (corner >> j) & 1 == 1;
            if upper {
                weight *= 1.0 - w;
                flat += (k + 1).min(geo.shape[j] - 1) * strides[j];
            } else {
                weight *= w;
                flat += k * strides[j];
            }
        }
        if weight != 0.0 {
            total += weight * values[flat];
        }
    }
    Ok(total)
}

/// Density nonconformity score `-f̂(y)`.
pub fn score_density(grid: &GridDistribution, y: &[f64]) -> Result<f64> {
    Ok(-interp_density(grid, y)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    Argmax,
    WeightedMean,
}

pub fn decode(grid: &GridDistribution, mode: DecodeMode) -> Result<Vec<f64>> {
    if !(grid.sum() > 0.0) {
        return Err(Error::DegenerateGrid);
    }
    let geo = grid.geometry();
    match mode {
        DecodeMode::Argmax => {
            let mut best = 0;
            for (i, &p) in grid.values().iter().enumerate() {
                if p > grid.values()[best] {
                    best = i;
                }
            }
            Ok(geo.midpoint_flat(best))
        }
        DecodeMode::WeightedMean => Ok(fit_gaussian(grid)?.0),
    }
}

/// Probability-weighted mean and covariance of the cell midpoints.
pub fn fit_gaussian(grid: &GridDistribution) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let total = grid.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateGrid);
    }
    let geo = grid.geometry();
    let d = geo.dims();
    let mut mean = vec![0.0; d];
    for (flat, &p) in grid.values().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let m = geo.midpoint_flat(flat);
        for j in 0..d {
            mean[j] += p * m[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = vec![vec![0.0; d]; d];
    for (flat, &p) in grid.values().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let m = geo.midpoint_flat(flat);
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] += p * (m[i] - mean[i]) * (m[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= total;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, cov))
}

/// Cell-wise mean of grids sharing one geometry, renormalized.
pub fn average_grids(grids: &[GridDistribution]) -> Result<GridDistribution> {
    let first = grids
        .first()
        .ok_or_else(|| Error::DegenerateInput("no grids to average".into()))?;
    if grids.iter().any(|g| !g.geometry().same_as(first.geometry())) {
        return Err(Error::GeometryMismatch);
    }
    let n = grids.len() as f64;
    let mut values = vec![0.0; first.len()];
    for g in grids {
        for (acc, v) in values.iter_mut().zip(g.values()) {
            *acc += v / n;
        }
    }
    GridDistribution::new(first.geometry().clone(), values)
}

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const IDENTITY: Temperature = Temperature(1.0);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::config("temperature", format!("{tau} is not > 0")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = String;
    fn try_from(v: f64) -> std::result::Result<Self, String> {
        Temperature::new(v).map_err(|e| e.to_string())
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

fn logits(values: &[f64]) -> Vec<f64> {
    values.iter().map(|p| p.max(LOG_FLOOR).ln()).collect()
}

fn log_sum_exp_scaled(logits: &[f64], inv_tau: f64) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * inv_tau;
    max + logits.iter().map(|l| (l * inv_tau - max).exp()).sum::<f64>().ln()
}

/// `softmax(log(max(p, 1e-12)) / τ)` over all cells.
pub fn apply_temperature(grid: &GridDistribution, t: Temperature) -> GridDistribution {
    let inv = 1.0 / t.value();
    let l = logits(grid.values());
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = l.iter().map(|v| ((v - max) * inv).exp()).collect();
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    GridDistribution::from_raw(grid.geometry().clone(), values)
}

/// Logits plus the flat index of the cell holding the truth (nearest cell
/// when the truth lies outside the grid).
struct NllTerm {
    logits: Vec<f64>,
    target: usize,
}

fn nll_terms(cal: &[Example]) -> Result<Vec<NllTerm>> {
    if cal.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    cal.iter()
        .map(|ex| {
            let grid = ex.grid.as_ref().ok_or_else(|| Error::MissingField {
                method: "temperature".into(),
                field: "grid",
                id: ex.id.clone(),
            })?;
            let y = ex.truth_in_grid_frame();
            let geo = grid.geometry();
            let cell = geo.cell_of(&y).unwrap_or_else(|| geo.nearest_cell(&y));
            Ok(NllTerm {
                logits: logits(grid.values()),
                target: geo.flat_index(&cell)?,
            })
        })
        .collect()
}

fn mean_nll_terms(terms: &[NllTerm], tau: f64) -> f64 {
    let inv = 1.0 / tau;
    terms
        .iter()
        .map(|t| log_sum_exp_scaled(&t.logits, inv) - t.logits[t.target] * inv)
        .sum::<f64>()
        / terms.len() as f64
}

/// Mean negative log-likelihood of the truth cells after scaling by `t`.
pub fn mean_nll(cal: &[Example], t: Temperature) -> Result<f64> {
    Ok(mean_nll_terms(&nll_terms(cal)?, t.value()))
}

pub const TEMPERATURE_RANGE: (f64, f64) = (0.01, 100.0);

/// Temperature minimizing the mean NLL, by golden-section search over
/// `log τ ∈ [log 0.01, log 100]` to a tolerance of 1e-4 in `log τ`.
pub fn fit_temperature(cal: &[Example]) -> Result<Temperature> {
    let terms = nll_terms(cal)?;
    let f = |x: f64| mean_nll_terms(&terms, x.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-4 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // the search can settle on a shoulder; never do worse than these
    let mut best = (0.5 * (a + b), f(0.5 * (a + b)));
    for x in [0.0, TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln()] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    Temperature::new(best.0.exp())
}

//! Regular grids over physical (mm) coordinates and the discrete
//! probability distributions ("heatmaps") that live on them.
//!
//! Cell `k` along axis `j` is centered at `origin[j] + k * spacing[j]` and
//! covers the half-open interval `[center - spacing/2, center + spacing/2)`.
//! The upper outer face of the grid belongs to the last cell so that the
//! cells partition the closed physical extent exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::AffineMap;

/// Negative mass above this is treated as producer noise and clamped.
pub const NEGATIVE_CLAMP: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
}

impl GridGeometry {
    pub fn new(shape: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>) -> Result<Self> {
        let g = GridGeometry {
            shape,
            origin,
            spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// Geometry with the given shape, unit spacing and origin at zero.
    pub fn unit(shape: &[usize]) -> Self {
        GridGeometry {
            shape: shape.to_vec(),
            origin: vec![0.0; shape.len()],
            spacing: vec![1.0; shape.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.shape.len();
        if d == 0 {
            return Err(Error::InvariantViolation("grid has no axes".into()));
        }
        if self.origin.len() != d || self.spacing.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: if self.origin.len() != d {
                    self.origin.len()
                } else {
                    self.spacing.len()
                },
            });
        }
        if self.shape.contains(&0) {
            return Err(Error::InvariantViolation(format!(
                "grid shape {:?} has an empty axis",
                self.shape
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvariantViolation(format!(
                "spacing {:?} must be strictly positive",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvariantViolation("origin is not finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// C-order strides in cells.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims()];
        for j in (0..self.dims().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.shape[j + 1];
        }
        strides
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims() || index.iter().zip(&self.shape).any(|(&i, &n)| i >= n) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index.iter().zip(self.strides()).map(|(&i, s)| i * s).sum())
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.dims()];
        for j in (0..self.dims()).rev() {
            index[j] = flat % self.shape[j];
            flat /= self.shape[j];
        }
        index
    }

    pub fn midpoint_coord(&self, axis: usize, k: usize) -> f64 {
        self.origin[axis] + k as f64 * self.spacing[axis]
    }

    pub fn midpoint(&self, index: &[usize]) -> Vec<f64> {
        index
            .iter()
            .enumerate()
            .map(|(j, &k)| self.midpoint_coord(j, k))
            .collect()
    }

    pub fn midpoint_flat(&self, flat: usize) -> Vec<f64> {
        self.midpoint(&self.unravel(flat))
    }

    /// Lower and upper physical bound of axis `j`.
    pub fn extent(&self, axis: usize) -> (f64, f64) {
        let half = 0.5 * self.spacing[axis];
        (
            self.origin[axis] - half,
            self.midpoint_coord(axis, self.shape[axis] - 1) + half,
        )
    }

    pub fn in_extent(&self, y: &[f64]) -> bool {
        y.len() == self.dims()
            && (0..self.dims()).all(|j| {
                let (lo, hi) = self.extent(j);
                y[j] >= lo && y[j] <= hi
            })
    }

    /// Cell index along one axis, or `None` outside the extent.
    pub fn axis_cell(&self, axis: usize, y: f64) -> Option<usize> {
        let n = self.shape[axis];
        let t = (y - self.origin[axis]) / self.spacing[axis] + 0.5;
        if !(t >= 0.0) {
            return None;
        }
        let k = t.floor();
        if k < n as f64 {
            Some(k as usize)
        } else if t <= n as f64 {
            Some(n - 1)
        } else {
            None
        }
    }

    /// Cell containing `y` under the half-open partition.
    pub fn cell_of(&self, y: &[f64]) -> Option<Vec<usize>> {
        if y.len() != self.dims() {
            return None;
        }
        (0..self.dims()).map(|j| self.axis_cell(j, y[j])).collect()
    }

    /// Nearest cell to `y`, clamping coordinates into the grid.
    pub fn nearest_cell(&self, y: &[f64]) -> Vec<usize> {
        (0..self.dims())
            .map(|j| {
                let t = ((y[j] - self.origin[j]) / self.spacing[j]).round();
                t.clamp(0.0, (self.shape[j] - 1) as f64) as usize
            })
            .collect()
    }

    /// Geometry of blocks of `factor[j]` cells per axis.
    pub fn coarsen(&self, factor: &[usize]) -> Result<GridGeometry> {
        if factor.len() != self.dims() {
            return Err(Error::DimMismatch {
                expected: self.dims(),
                found: factor.len(),
            });
        }
        for (j, (&f, &n)) in factor.iter().zip(&self.shape).enumerate() {
            if f == 0 || n % f != 0 {
                return Err(Error::config(
                    "bin_factor",
                    format!("factor {f} does not divide axis {j} of length {n}"),
                ));
            }
        }
        Ok(GridGeometry {
            shape: self.shape.iter().zip(factor).map(|(n, f)| n / f).collect(),
            origin: (0..self.dims())
                .map(|j| self.origin[j] + 0.5 * (factor[j] - 1) as f64 * self.spacing[j])
                .collect(),
            spacing: self
                .spacing
                .iter()
                .zip(factor)
                .map(|(s, &f)| s * f as f64)
                .collect(),
        })
    }

    pub fn transform(&self, map: &AffineMap) -> Result<GridGeometry> {
        crate::error::check_dims(self.dims(), map.dims())?;
        Ok(GridGeometry {
            shape: self.shape.clone(),
            origin: map.apply(&self.origin),
            spacing: self.spacing.iter().zip(&map.scale).map(|(s, a)| s * a).collect(),
        })
    }

    pub fn same_as(&self, other: &GridGeometry) -> bool {
        self.shape == other.shape && self.origin == other.origin && self.spacing == other.spacing
    }
}

/// Discrete probability tensor on a [`GridGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl GridDistribution {
    /// Validates and normalizes. Negative values above [`NEGATIVE_CLAMP`]
    /// are clamped to zero; anything more negative is rejected.
    pub fn new(geometry: GridGeometry, mut values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::ShapeMismatch {
                expected: geometry.shape.clone(),
                found: vec![values.len()],
            });
        }
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvariantViolation("grid value is not finite".into()));
            }
            if *v < 0.0 {
                if *v > NEGATIVE_CLAMP {
                    *v = 0.0;
                } else {
                    return Err(Error::InvariantViolation(format!("grid value {v} is negative")));
                }
            }
        }
        let mut g = GridDistribution { geometry, values };
        g.normalize()?;
        Ok(g)
    }

    /// Wraps values without validation or normalization.
    pub(crate) fn from_raw(geometry: GridGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(geometry.len(), values.len());
        GridDistribution { geometry, values }
    }

    /// Scales to unit sum. A sum already within summation round-off of 1 is
    /// left alone, so normalizing twice changes nothing.
    pub fn normalize(&mut self) -> Result<()> {
        let total: f64 = self.values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateGrid);
        }
        if (total - 1.0).abs() <= 2.0 * self.values.len() as f64 * f64::EPSILON {
            return Ok(());
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(())
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dims(&self) -> usize {
        self.geometry.dims()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.geometry.flat_index(index)?])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Same probabilities on a transformed coordinate frame.
    pub fn transform(&self, map: &AffineMap) -> Result<GridDistribution> {
        Ok(GridDistribution {
            geometry: self.geometry.transform(map)?,
            values: self.values.clone(),
        })
    }

    /// Sum of probabilities over blocks of `factor` cells.
    pub fn coarsen(&self, factor: &[usize]) -> Result<GridDistribution> {
        let coarse = self.geometry.coarsen(factor)?;
        let mut values = vec![0.0; coarse.len()];
        let cstrides = coarse.strides();
        for (flat, &p) in self.values.iter().enumerate() {
            let idx = self.geometry.unravel(flat);
            let bin: usize = idx
                .iter()
                .zip(factor)
                .zip(&cstrides)
                .map(|((i, f), s)| (i / f) * s)
                .sum();
            values[bin] += p;
        }
        Ok(GridDistribution {
            geometry: coarse,
            values,
        })
    }

    /// Cell indices (flat) ordered by descending probability; ties keep
    /// lexicographic cell order.
    pub fn order_desc(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        order
    }
}

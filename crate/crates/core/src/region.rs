//! Prediction regions: axis-aligned boxes, ellipsoids and grid-cell masks.
//!
//! Boundaries of boxes and ellipsoids count as inside. Grid masks use the
//! half-open cell partition of [`GridGeometry`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::GridGeometry;
use crate::linalg;

/// Axis-aligned map `y ↦ scale ⊙ y + offset` with strictly positive scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(scale: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let m = AffineMap { scale, offset };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(d: usize) -> Self {
        AffineMap {
            scale: vec![1.0; d],
            offset: vec![0.0; d],
        }
    }

    pub fn scaling(scale: Vec<f64>) -> Result<Self> {
        let d = scale.len();
        AffineMap::new(scale, vec![0.0; d])
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.scale.len(), self.offset.len())?;
        if self.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("scale", "must be strictly positive"));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::config("offset", "must be finite"));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(v, (s, o))| s * v + o)
            .collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(v, (s, o))| (v - o) / s)
            .collect()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        AffineMap {
            scale: self.scale.iter().zip(&inner.scale).map(|(a, b)| a * b).collect(),
            offset: self.apply(&inner.offset),
        }
    }

    /// `S C S` for the diagonal scale matrix `S`.
    pub fn transform_covariance(&self, cov: &[Vec<f64>]) -> Vec<Vec<f64>> {
        cov.iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| self.scale[i] * v * self.scale[j])
                    .collect()
            })
            .collect()
    }

    pub fn determinant(&self) -> f64 {
        self.scale.iter().product()
    }
}

/// Boolean mask over the cells of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MaskRepr", try_from = "MaskRepr")]
pub struct GridMask {
    geometry: GridGeometry,
    included: Vec<bool>,
}

impl GridMask {
    pub fn new(geometry: GridGeometry, included: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if included.len() != geometry.len() {
            return Err(Error::ShapeMismatch {
                expected: geometry.shape.clone(),
                found: vec![included.len()],
            });
        }
        Ok(GridMask { geometry, included })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match self.geometry.cell_of(y) {
            Some(idx) => self.included[self.geometry.flat_index(&idx).expect("in range")],
            None => false,
        }
    }
}

/// Run-length form used on the wire: `runs` alternate starting with `first`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaskRepr {
    shape: Vec<usize>,
    origin: Vec<f64>,
    spacing: Vec<f64>,
    first: bool,
    runs: Vec<usize>,
}

impl From<GridMask> for MaskRepr {
    fn from(m: GridMask) -> Self {
        let first = m.included.first().copied().unwrap_or(false);
        let mut runs = Vec::new();
        let mut current = first;
        let mut len = 0usize;
        for &b in &m.included {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        MaskRepr {
            shape: m.geometry.shape,
            origin: m.geometry.origin,
            spacing: m.geometry.spacing,
            first,
            runs,
        }
    }
}

impl TryFrom<MaskRepr> for GridMask {
    type Error = String;

    fn try_from(r: MaskRepr) -> std::result::Result<Self, String> {
        let geometry = GridGeometry::new(r.shape, r.origin, r.spacing).map_err(|e| e.to_string())?;
        let mut included = Vec::with_capacity(geometry.len());
        let mut value = r.first;
        for run in r.runs {
            included.extend(std::iter::repeat_n(value, run));
            value = !value;
        }
        GridMask::new(geometry, included).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionRegion {
    /// Negative half-widths encode the empty region.
    HyperRect {
        center: Vec<f64>,
        #[serde(with = "crate::json_float::vec")]
        half_widths: Vec<f64>,
    },
    /// `{y : sqrt((y-c)ᵀ Σ⁻¹ (y-c)) ≤ radius}`; negative radius is empty.
    Ellipsoid {
        center: Vec<f64>,
        shape_matrix: Vec<Vec<f64>>,
        #[serde(with = "crate::json_float")]
        radius: f64,
    },
    GridMask(GridMask),
}

impl PredictionRegion {
    pub fn dims(&self) -> usize {
        match self {
            PredictionRegion::HyperRect { center, .. } => center.len(),
            PredictionRegion::Ellipsoid { center, .. } => center.len(),
            PredictionRegion::GridMask(m) => m.geometry.dims(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            PredictionRegion::HyperRect { half_widths, .. } => half_widths.iter().any(|&h| h < 0.0),
            PredictionRegion::Ellipsoid { radius, .. } => *radius < 0.0,
            PredictionRegion::GridMask(m) => m.count() == 0,
        }
    }

    pub fn contains(&self, y: &[f64]) -> Result<bool> {
        check_dims(self.dims(), y.len())?;
        Ok(match self {
            PredictionRegion::HyperRect { center, half_widths } => center
                .iter()
                .zip(half_widths)
                .zip(y)
                .all(|((c, h), v)| (v - c).abs() <= *h),
            PredictionRegion::Ellipsoid {
                center,
                shape_matrix,
                radius,
            } => {
                if *radius < 0.0 {
                    false
                } else if radius.is_infinite() {
                    true
                } else {
                    let r: Vec<f64> = y.iter().zip(center).map(|(a, b)| a - b).collect();
                    linalg::mahalanobis(&r, &linalg::to_matrix(shape_matrix))? <= *radius
                }
            }
            PredictionRegion::GridMask(m) => m.contains(y),
        })
    }

    /// Area (d = 2) or volume (d = 3) in mm^d.
    pub fn measure(&self) -> Result<f64> {
        Ok(match self {
            PredictionRegion::HyperRect { half_widths, .. } => {
                if half_widths.iter().any(|&h| h < 0.0) {
                    0.0
                } else {
                    half_widths.iter().map(|h| 2.0 * h).product()
                }
            }
            PredictionRegion::Ellipsoid {
                shape_matrix, radius, ..
            } => {
                let det = linalg::determinant_spd(&linalg::to_matrix(shape_matrix))?;
                if *radius <= 0.0 {
                    0.0
                } else {
                    let d = shape_matrix.len();
                    linalg::unit_ball_volume(d) * radius.powi(d as i32) * det.sqrt()
                }
            }
            PredictionRegion::GridMask(m) => m.count() as f64 * m.geometry.cell_volume(),
        })
    }

    pub fn transform(&self, map: &AffineMap) -> Result<PredictionRegion> {
        check_dims(self.dims(), map.dims())?;
        map.validate()?;
        Ok(match self {
            PredictionRegion::HyperRect { center, half_widths } => PredictionRegion::HyperRect {
                center: map.apply(center),
                half_widths: half_widths.iter().zip(&map.scale).map(|(h, s)| h * s).collect(),
            },
            PredictionRegion::Ellipsoid {
                center,
                shape_matrix,
                radius,
            } => PredictionRegion::Ellipsoid {
                center: map.apply(center),
                shape_matrix: map.transform_covariance(shape_matrix),
                radius: *radius,
            },
            PredictionRegion::GridMask(m) => PredictionRegion::GridMask(GridMask {
                geometry: m.geometry.transform(map)?,
                included: m.included.clone(),
            }),
        })
    }

    /// Axis-aligned bounds `(lo, hi)`; infinite for full-domain regions.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            PredictionRegion::HyperRect { center, half_widths } => (
                center.iter().zip(half_widths).map(|(c, h)| c - h).collect(),
                center.iter().zip(half_widths).map(|(c, h)| c + h).collect(),
            ),
            PredictionRegion::Ellipsoid {
                center,
                shape_matrix,
                radius,
            } => {
                let ext: Vec<f64> = (0..center.len())
                    .map(|j| radius * shape_matrix[j][j].sqrt())
                    .collect();
                (
                    center.iter().zip(&ext).map(|(c, e)| c - e).collect(),
                    center.iter().zip(&ext).map(|(c, e)| c + e).collect(),
                )
            }
            PredictionRegion::GridMask(m) => {
                let g = &m.geometry;
                let d = g.dims();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for (flat, _) in m.included.iter().enumerate().filter(|(_, b)| **b) {
                    let idx = g.unravel(flat);
                    for j in 0..d {
                        let c = g.midpoint_coord(j, idx[j]);
                        let half = 0.5 * g.spacing[j].abs();
                        lo[j] = lo[j].min(c - half);
                        hi[j] = hi[j].max(c + half);
                    }
                }
                (lo, hi)
            }
        }
    }
}

/// Union of whole grid cells: every point of an included bin's cell is in
/// the region.
pub fn bins_to_region(geometry: &GridGeometry, bins: &BTreeSet<Vec<usize>>) -> Result<PredictionRegion> {
    let mut included = vec![false; geometry.len()];
    for bin in bins {
        included[geometry.flat_index(bin)?] = true;
    }
    Ok(PredictionRegion::GridMask(GridMask::new(
        geometry.clone(),
        included,
    )?))
}

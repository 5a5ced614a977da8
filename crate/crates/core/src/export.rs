//! Static SVG rendering of a region, or of a planar slice through a 3-D one.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::region::{GridMask, PredictionRegion};

const FILL: &str = "#3b82f6";
const STROKE: &str = "#1e3a8a";

/// Where a 3-D region is cut. 2-D regions ignore it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slice {
    /// Axis held fixed.
    pub axis: usize,
    pub position: SlicePosition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlicePosition {
    /// Through the region's center (the middle layer for masks).
    Center,
    /// Cell layer along `axis`; grid masks only.
    Index(usize),
    /// Coordinate in mm along `axis`.
    Coord(f64),
}

impl Default for Slice {
    fn default() -> Self {
        Slice {
            axis: 2,
            position: SlicePosition::Center,
        }
    }
}

/// 2-D ellipse `{u : (u−c)ᵀ C⁻¹ (u−c) ≤ r²}` expressed by semi-axes and the
/// rotation of the first one, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub angle_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, u: [f64; 2]) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (u[0] - self.center[0], u[1] - self.center[1]);
        let a = c * dx + s * dy;
        let b = -s * dx + c * dy;
        (a / self.semi_axes[0]).powi(2) + (b / self.semi_axes[1]).powi(2) <= 1.0
    }
}

/// Axes kept in the drawing, in order.
fn kept_axes(d: usize, slice: &Slice) -> Result<[usize; 2]> {
    match d {
        2 => Ok([0, 1]),
        3 if slice.axis < 3 => {
            let v: Vec<usize> = (0..3).filter(|&j| j != slice.axis).collect();
            Ok([v[0], v[1]])
        }
        _ => Err(Error::config("axis", format!("must be below {d}"))),
    }
}

/// Planar section of an ellipsoid. `None` when the plane misses it.
///
/// With `S` the shape matrix and `k` the fixed axis at offset `v` from the
/// center, the section has shape `S_uu − S_uk S_ku / S_kk`, center
/// `c_u + S_uk v / S_kk` and squared radius `r² − v² / S_kk`.
pub fn ellipse_slice(
    center: &[f64],
    shape: &[Vec<f64>],
    radius: f64,
    slice: &Slice,
) -> Result<Option<Ellipse>> {
    let d = center.len();
    let keep = kept_axes(d, slice)?;
    let mut c = [center[keep[0]], center[keep[1]]];
    let mut m = DMatrix::from_fn(2, 2, |i, j| shape[keep[i]][keep[j]]);
    let mut r2 = radius * radius;
    if d == 3 {
        let k = slice.axis;
        let v = match slice.position {
            SlicePosition::Center => 0.0,
            SlicePosition::Coord(t) => t - center[k],
            SlicePosition::Index(_) => {
                return Err(Error::config(
                    "index",
                    "only grid masks have cell layers; use a coordinate",
                ))
            }
        };
        let skk = shape[k][k];
        if !(skk > 0.0) {
            return Err(Error::NonSpdMatrix);
        }
        for i in 0..2 {
            c[i] += shape[keep[i]][k] * v / skk;
            for j in 0..2 {
                m[(i, j)] -= shape[keep[i]][k] * shape[k][keep[j]] / skk;
            }
        }
        r2 -= v * v / skk;
    }
    if radius < 0.0 || r2 < 0.0 {
        return Ok(None);
    }
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NonSpdMatrix);
    }
    let r = r2.sqrt();
    let v0 = eig.eigenvectors.column(0);
    Ok(Some(Ellipse {
        center: c,
        semi_axes: [r * eig.eigenvalues[0].sqrt(), r * eig.eigenvalues[1].sqrt()],
        angle_deg: v0[1].atan2(v0[0]).to_degrees(),
    }))
}

/// Axis-aligned rectangles (x, y, w, h) making up the drawing.
enum Shapes {
    Rects(Vec<[f64; 4]>),
    Ellipse(Option<Ellipse>),
}

fn mask_rects(mask: &GridMask, slice: &Slice) -> Result<Vec<[f64; 4]>> {
    let geo = mask.geometry();
    let d = geo.dims();
    let keep = kept_axes(d, slice)?;
    let layer = if d == 3 {
        let k = slice.axis;
        Some(match slice.position {
            SlicePosition::Center => geo.shape[k] / 2,
            SlicePosition::Index(i) if i < geo.shape[k] => i,
            SlicePosition::Index(i) => {
                return Err(Error::config("index", format!("{i} outside 0..{}", geo.shape[k])))
            }
            SlicePosition::Coord(t) => match geo.axis_cell(k, t) {
                Some(i) => i,
                None => return Ok(Vec::new()),
            },
        })
    } else {
        None
    };
    let mut rects = Vec::new();
    for (flat, &inc) in mask.included().iter().enumerate() {
        if !inc {
            continue;
        }
        let idx = geo.unravel(flat);
        if let Some(l) = layer {
            if idx[slice.axis] != l {
                continue;
            }
        }
        let mid = geo.midpoint(&idx);
        let (w, h) = (geo.spacing[keep[0]].abs(), geo.spacing[keep[1]].abs());
        rects.push([mid[keep[0]] - w / 2.0, mid[keep[1]] - h / 2.0, w, h]);
    }
    Ok(rects)
}

fn shapes(region: &PredictionRegion, slice: &Slice) -> Result<Shapes> {
    match region {
        PredictionRegion::HyperRect { center, half_widths } => {
            let keep = kept_axes(center.len(), slice)?;
            if half_widths.iter().any(|h| h.is_infinite() && *h > 0.0) {
                return Err(Error::DegenerateInput("unbounded region cannot be drawn".into()));
            }
            let mut hit = half_widths.iter().all(|&h| h >= 0.0);
            if center.len() == 3 {
                let k = slice.axis;
                match slice.position {
                    SlicePosition::Center => {}
                    SlicePosition::Coord(t) => hit &= (t - center[k]).abs() <= half_widths[k],
                    SlicePosition::Index(_) => {
                        return Err(Error::config(
                            "index",
                            "only grid masks have cell layers; use a coordinate",
                        ))
                    }
                }
            }
            let rects = if hit {
                let (a, b) = (keep[0], keep[1]);
                vec![[
                    center[a] - half_widths[a],
                    center[b] - half_widths[b],
                    2.0 * half_widths[a],
                    2.0 * half_widths[b],
                ]]
            } else {
                Vec::new()
            };
            Ok(Shapes::Rects(rects))
        }
        PredictionRegion::Ellipsoid {
            center,
            shape_matrix,
            radius,
        } => {
            if radius.is_infinite() && *radius > 0.0 {
                return Err(Error::DegenerateInput("unbounded region cannot be drawn".into()));
            }
            Ok(Shapes::Ellipse(ellipse_slice(
                center,
                shape_matrix,
                *radius,
                slice,
            )?))
        }
        PredictionRegion::GridMask(mask) => Ok(Shapes::Rects(mask_rects(mask, slice)?)),
    }
}

/// Renders the region, or its slice, as a standalone SVG document in mm
/// units. An empty slice yields a document with no shapes.
pub fn to_svg(region: &PredictionRegion, slice: &Slice) -> Result<String> {
    let shapes = shapes(region, slice)?;
    let (lo, hi) = region.bounding_box();
    let keep = kept_axes(region.dims(), slice)?;
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let (mut x0, mut y0) = (finite(lo[keep[0]]), finite(lo[keep[1]]));
    let (mut x1, mut y1) = (finite(hi[keep[0]]), finite(hi[keep[1]]));
    if x1 < x0 || y1 < y0 {
        // empty region: any small canvas will do
        (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    }
    let margin = 0.05 * (x1 - x0).max(y1 - y0).max(1.0);
    let (w, h) = (x1 - x0 + 2.0 * margin, y1 - y0 + 2.0 * margin);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" width="{}mm" height="{}mm">"#,
        x0 - margin,
        y0 - margin,
        w,
        h,
        w,
        h
    );
    let _ = writeln!(
        out,
        r#"  <g fill="{FILL}" fill-opacity="0.5" stroke="{STROKE}" stroke-width="{}">"#,
        0.005 * w.max(h)
    );
    match shapes {
        Shapes::Rects(rects) => {
            for [x, y, rw, rh] in rects {
                let _ = writeln!(out, r#"    <rect x="{x}" y="{y}" width="{rw}" height="{rh}"/>"#);
            }
        }
        Shapes::Ellipse(Some(e)) => {
            let _ = writeln!(
                out,
                r#"    <ellipse cx="{}" cy="{}" rx="{}" ry="{}" transform="rotate({} {} {})"/>"#,
                e.center[0],
                e.center[1],
                e.semi_axes[0],
                e.semi_axes[1],
                e.angle_deg,
                e.center[0],
                e.center[1]
            );
        }
        Shapes::Ellipse(None) => {}
    }
    out.push_str("  </g>\n</svg>\n");
    Ok(out)
}

//! Small dense linear-algebra helpers over `nalgebra` for d ≤ 3 matrices.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Smallest per-axis scale (mm) used anywhere a standard deviation divides.
pub const SCALE_FLOOR: f64 = 1e-6;

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Checks shape, symmetry (1e-9) and positive semi-definiteness.
pub fn check_covariance(rows: &[Vec<f64>], d: usize) -> std::result::Result<(), String> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(format!("covariance is not {d}x{d}"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("covariance has non-finite entries".into());
    }
    for i in 0..d {
        for j in 0..i {
            if (rows[i][j] - rows[j][i]).abs() > 1e-9 {
                return Err("covariance is not symmetric".into());
            }
        }
    }
    let eig = to_matrix(rows).symmetric_eigen().eigenvalues;
    let scale = eig.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if eig.iter().any(|&v| v < -1e-9 * scale) {
        return Err("covariance is not positive semi-definite".into());
    }
    Ok(())
}

pub fn mean(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect()
}

/// Unbiased sample covariance; `None` for fewer than two points.
pub fn sample_covariance(points: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    if points.len() < 2 {
        return None;
    }
    let d = points[0].len();
    let mu = mean(points);
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (p[i] - mu[i]) * (p[j] - mu[j]);
            }
        }
    }
    Some(cov / (points.len() - 1) as f64)
}

/// Isotropic covariance whose variance is the mean squared deviation per
/// coordinate.
pub fn isotropic_covariance(points: &[Vec<f64>]) -> DMatrix<f64> {
    let d = points[0].len();
    let mu = mean(points);
    let ss: f64 = points
        .iter()
        .flat_map(|p| p.iter().zip(&mu).map(|(a, m)| (a - m) * (a - m)))
        .sum();
    DMatrix::identity(d, d) * (ss / (points.len() * d) as f64)
}

/// Adds a ridge `εI`, `ε = 1e-9 · trace / d`, when `cov` is near-singular.
/// A zero matrix gets `ε = SCALE_FLOOR²`.
pub fn regularize(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 && min > 1e-12 * max {
        return sym;
    }
    let eps = (1e-9 * sym.trace() / d as f64).max(SCALE_FLOOR * SCALE_FLOOR);
    sym + DMatrix::identity(d, d) * eps
}

/// `sqrt(rᵀ Σ⁻¹ r)`; errors when `Σ` is not SPD.
pub fn mahalanobis(residual: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov.clone().cholesky().ok_or(Error::NonSpdMatrix)?;
    let r = DVector::from_column_slice(residual);
    let z = chol.l().solve_lower_triangular(&r).ok_or(Error::NonSpdMatrix)?;
    Ok(z.norm())
}

pub fn determinant_spd(cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov.clone().cholesky().ok_or(Error::NonSpdMatrix)?;
    Ok(chol.l().diagonal().iter().map(|v| v * v).product())
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => {
            let h = d as f64 / 2.0;
            std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h + 1.0)
        }
    }
}

/// Quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_quantile(p: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

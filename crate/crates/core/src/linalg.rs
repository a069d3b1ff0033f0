//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Largest modulus over the (possibly complex) spectrum of a square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

pub fn cholesky(h: &Matrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(h.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Solves `Z H = J` for symmetric positive definite `H` (i.e. `Z = J H^{-1}`).
pub fn right_solve_spd(j: &Matrix, h: &Matrix) -> Result<Matrix> {
    let chol = cholesky(h, "Hessian block")?;
    Ok(chol.solve(&j.transpose()).transpose())
}

pub fn inverse_spd(h: &Matrix) -> Result<Matrix> {
    Ok(cholesky(h, "matrix inverse")?.inverse())
}

/// Orthogonal projector onto `null(A)`.
pub fn null_space_projector(a: &Matrix) -> Result<Matrix> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Ok(Matrix::identity(n, n));
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let rank_deficient = || Error::Singular("equality matrix does not have full row rank".into());
    if a.nrows() > n || !(smin > 1e-12 * smax) {
        return Err(rank_deficient());
    }
    let chol = Cholesky::new(a * a.transpose()).ok_or_else(rank_deficient)?;
    let correction = a.transpose() * chol.solve(a);
    Ok(Matrix::identity(n, n) - correction)
}

pub fn all_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn check_len(context: &'static str, v: &Vector, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Least-squares slope and coefficient of determination of `ys` against `0..n`.
pub fn linear_fit(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return (0.0, 1.0);
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

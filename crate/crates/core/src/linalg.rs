//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Rejects matrices that are asymmetric or have an eigenvalue `<= 0`.
pub fn check_positive_definite(m: &DMatrix<f64>) -> Result<()> {
    check_square(m, "matrix")?;
    check_symmetric(m)?;
    let (values, _) = sorted_eigen(m);
    for (index, &value) in values.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NotPositiveDefinite { index, value });
        }
    }
    Ok(())
}

/// Rejects matrices with an eigenvalue below `-tol * max|m|`.
pub fn check_positive_semidefinite(m: &DMatrix<f64>) -> Result<()> {
    check_square(m, "matrix")?;
    check_symmetric(m)?;
    let tol = 1e-12 * max_abs(m).max(1e-300);
    let (values, _) = sorted_eigen(m);
    for (index, &value) in values.iter().enumerate() {
        if value < -tol || value.is_nan() {
            return Err(Error::NotPositiveSemidefinite { index, value });
        }
    }
    Ok(())
}

/// `f(M)` for symmetric `M`, applying `f` to the eigenvalues.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m);
    let mapped = DMatrix::from_diagonal(&values.map(f));
    let out = &vectors * mapped * vectors.transpose();
    symmetrize(&out)
}

/// Symmetric square root of a PSD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |v| v.max(0.0).sqrt())
}

/// Symmetric inverse square root of a PD matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |v| 1.0 / v.sqrt())
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let scale = max_abs(m).max(1e-300);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].abs() > 1e-14 * scale {
                return false;
            }
        }
    }
    true
}

pub fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square() && is_diagonal(m) && (0..m.nrows()).all(|i| (m[(i, i)] - 1.0).abs() <= 1e-14)
}

/// Singular values in non-increasing order (length `min(rows, cols)`).
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().map(|v| v.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Cholesky factorization plus a diagonal-based condition estimate
/// `(max Lᵢᵢ / min Lᵢᵢ)²`.
pub fn cholesky_with_condition(m: DMatrix<f64>) -> Option<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        let v = l[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let cond = if lo > 0.0 {
        (hi / lo).powi(2)
    } else {
        f64::INFINITY
    };
    Some((chol, cond))
}

/// Moore–Penrose pseudoinverse applied to `rhs`, with singular values below
/// `rel_tol * σ₁` treated as zero. Returns the solution and the numerical rank.
pub fn pinv_solve(a: &DMatrix<f64>, rhs: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let top = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * top;
    let mut rank = 0;
    let inv = svd.singular_values.map(|s| {
        if s > cutoff && s > 0.0 {
            rank += 1;
            1.0 / s
        } else {
            0.0
        }
    });
    let tmp = DMatrix::from_diagonal(&inv) * (u.transpose() * rhs);
    (v_t.transpose() * tmp, rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_check_reports_offending_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        match check_positive_definite(&m) {
            Err(Error::NotPositiveDefinite { index, value }) => {
                assert_eq!(index, 0);
                assert!((value + 2.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            check_positive_definite(&m),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m);
        assert!(max_abs(&(&r * &r - &m)) < 1e-12);
        let ri = sym_inv_sqrt(&m);
        let id = &ri * &m * &ri;
        assert!(max_abs(&(id - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn singular_values_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 3.0, 0.0]);
        let sv = singular_values(&m);
        assert!((sv[0] - 4.0).abs() < 1e-14 && (sv[1] - 3.0).abs() < 1e-14);
        assert!(singular_values(&DMatrix::zeros(0, 3)).is_empty());
    }

    #[test]
    fn pinv_solves_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        let (x, rank) = pinv_solve(&a, &b, 1e-12);
        assert_eq!(rank, 1);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12 && (x[(1, 0)] - 1.0).abs() < 1e-12);
    }
}

//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{AtlasError, Result};

/// Symmetry tolerance for matrices handed to the eigen-based routines.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalue floor used when whitening a target covariance.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-8;

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(AtlasError::Argument(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(AtlasError::Argument(format!(
                    "matrix not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mapped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&mapped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Symmetric inverse square root via eigendecomposition, with eigenvalues
/// clamped below at `eps`.
pub fn inverse_sqrt(m: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    if !(eps > 0.0) {
        return Err(AtlasError::Argument("eigenvalue floor must be positive".into()));
    }
    Ok(spectral_map(m, |l| 1.0 / l.max(eps).sqrt()))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues treated as 0).
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    Ok(spectral_map(m, |l| l.max(0.0).sqrt()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Minimum-norm solution of `a x = b` for symmetric PSD `a`.
pub fn pseudo_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new((a + a.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let cutoff = top * 1e-12 * a.nrows().max(1) as f64;
    let v = &eig.eigenvectors;
    let coeffs = v.transpose() * b;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(&c, &l)| if l > cutoff { c / l } else { 0.0 }),
    );
    v * scaled
}

/// Solves a symmetric system, preferring Cholesky and falling back to the
/// minimum-norm solution when the matrix is singular.
pub fn solve_spd_or_min_norm(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => pseudo_solve(&a, b),
    }
}

/// Outcome of a conjugate-gradient run.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradient for a symmetric positive-definite operator given as a
/// closure computing `out = A x`.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>, &mut DVector<f64>),
    b: &DVector<f64>,
    x: &mut DVector<f64>,
    rel_tol: f64,
    max_iters: usize,
) -> CgReport {
    let n = b.len();
    let b_norm = b.norm().max(f64::MIN_POSITIVE);
    let mut ax = DVector::zeros(n);
    apply(x, &mut ax);
    let mut r = b - &ax;
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let mut ap = DVector::zeros(n);
    let mut iterations = 0;
    while iterations < max_iters {
        if rs.sqrt() <= rel_tol * b_norm {
            break;
        }
        apply(&p, &mut ap);
        let denom = p.dot(&ap);
        if !(denom > 0.0) {
            break;
        }
        let alpha = rs / denom;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.dot(&r);
        p *= rs_new / rs;
        p += &r;
        rs = rs_new;
        iterations += 1;
    }
    let relative_residual = rs.sqrt() / b_norm;
    CgReport {
        iterations,
        relative_residual,
        converged: relative_residual <= rel_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: DMatrix<f64>, b: DMatrix<f64>, tol: f64) {
        let diff = (a - b).abs().max();
        assert!(diff < tol, "max abs diff {diff} >= {tol}");
    }

    #[test]
    fn scalar_matrix() {
        let m = DMatrix::identity(2, 2) * 4.0;
        assert_close(inverse_sqrt(&m, 1e-8).unwrap(), DMatrix::identity(2, 2) * 0.5, 1e-14);
    }

    #[test]
    fn whitening_reconstructs_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
        let r = inverse_sqrt(&m, 1e-8).unwrap();
        assert_close(&r * &m * r.transpose(), DMatrix::identity(2, 2), 1e-10);
        assert_close(r.clone(), r.transpose(), 1e-15);
    }

    #[test]
    fn singular_input_is_clamped() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let r = inverse_sqrt(&m, 1e-8).unwrap();
        assert!(r.iter().all(|v| v.is_finite()));
        assert!(r.abs().max() > 1e3);
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(matches!(inverse_sqrt(&m, 1e-8), Err(AtlasError::Argument(_))));
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let s = sqrt_psd(&m).unwrap();
        assert_close(&s * &s, m, 1e-12);
    }

    #[test]
    fn min_norm_solution() {
        // x1 + x2 = 2 has minimum-norm solution (1, 1).
        let a = DMatrix::from_element(2, 2, 1.0);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let x = solve_spd_or_min_norm(a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cg_matches_direct() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut x = DVector::zeros(3);
        let rep = conjugate_gradient(|v, out| out.copy_from(&(&a * v)), &b, &mut x, 1e-12, 30);
        assert!(rep.converged);
        let direct = a.clone().cholesky().unwrap().solve(&b);
        assert!((x - direct).amax() < 1e-10);
    }
}

//! Dense helpers on top of nalgebra used by the solver and the monitors.

use nalgebra::{Complex, DMatrix, DVector};

use crate::graph::sorted_symmetric_eigenvalues;
use crate::scalar::Real;

/// Largest singular value (matrix 2-norm).
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| a.max(b))
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    sorted_symmetric_eigenvalues(&symmetrize(m))
}

pub fn lambda_min<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m)[0]
}

pub fn lambda_max<T: Real>(m: &DMatrix<T>) -> T {
    *sym_eigenvalues(m).last().expect("non-empty matrix")
}

/// Symmetric (up to `tol`, relative) and Cholesky-factorizable.
pub fn is_spd<T: Real>(m: &DMatrix<T>, tol: T) -> bool {
    if !m.is_square() || m.is_empty() {
        return false;
    }
    let scale = m.norm().max(T::one());
    if (m - m.transpose()).norm() > tol * scale {
        return false;
    }
    symmetrize(m).cholesky().is_some()
}

pub fn complex_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<Complex<T>> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part among the eigenvalues (spectral abscissa).
pub fn spectral_abscissa<T: Real>(m: &DMatrix<T>) -> T {
    complex_eigenvalues(m)
        .iter()
        .map(|z| z.re)
        .fold(T::min_value().expect("bounded scalar"), |a, b| a.max(b))
}

/// Numerical rank from singular values with threshold `rel · σ_max`.
pub fn numerical_rank_complex<T: Real>(m: &DMatrix<Complex<T>>, rel: T) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if smax == T::zero() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel * smax).count()
}

/// Solves `Aᵀ·X + X·A = −C` through the Kronecker-product linear system.
/// Returns `None` when the operator is singular (A and −A share an eigenvalue).
pub fn solve_lyapunov<T: Real>(a: &DMatrix<T>, c: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let eye = DMatrix::<T>::identity(n, n);
    let at = a.transpose();
    // Column-major vec: vec(AᵀX) = (I⊗Aᵀ)vec(X), vec(XA) = (Aᵀ⊗I)vec(X).
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, c.iter().map(|&v| -v));
    let sol = op.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Quadratic form `vᵀ·M·v`.
pub fn quad_form<T: Real>(m: &DMatrix<T>, v: &DVector<T>) -> T {
    v.dot(&(m * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        // 2·a·x = −c with a = −1, c = 4 → x = 2.
        let a = DMatrix::from_element(1, 1, -1.0f64);
        let c = DMatrix::from_element(1, 1, 4.0);
        let x = solve_lyapunov(&a, &c).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_residual_2x2() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let x = solve_lyapunov(&a, &c).unwrap();
        let res = a.transpose() * &x + &x * &a + &c;
        assert!(res.norm() < 1e-13);
        assert!(is_spd(&x, 1e-12));
    }

    #[test]
    fn norms_and_spectra() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0f64, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&m) - 4.0).abs() < 1e-14);
        assert_eq!(lambda_min(&m), -4.0);
        assert!(!is_spd(&m, 1e-12));
        let rot = DMatrix::from_row_slice(2, 2, &[0.0f64, 1.0, -1.0, 0.0]);
        assert!(spectral_abscissa(&rot).abs() < 1e-14);
    }
}

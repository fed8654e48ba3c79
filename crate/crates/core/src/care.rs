//! Continuous algebraic Riccati equation `PA + AᵀP − PBBᵀP + Q = 0`.
//!
//! Solved by Newton–Kleinman iteration: every step is a Lyapunov solve for
//! the current closed loop. The initial stabilizing gain comes from a Kalman
//! controllability decomposition followed by Bass's shifted-Lyapunov design
//! on the controllable block (or `K₀ = 0` when `A` is already Hurwitz).

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::linalg::{
    complex_eigenvalues, is_spd, numerical_rank_complex, solve_lyapunov, spectral_abscissa,
    symmetrize,
};
use crate::scalar::Real;

pub const MAX_NEWTON_ITERATIONS: usize = 100;
pub const STALL_ITERATIONS: usize = 5;

/// Relative singular-value threshold of the PBH rank test.
const PBH_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CareError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Q must be symmetric positive definite")]
    QNotPositiveDefinite,
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("Assumption 2 violated: (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("could not construct an initial stabilizing gain")]
    NoInitialGain,
    #[error("singular Lyapunov operator at Newton step {0}")]
    SingularLyapunov(usize),
    #[error("Newton-Kleinman did not converge in {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("solution does not stabilize the closed loop")]
    NotStabilizing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareProblem<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub q: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution<T: Real> {
    pub p: DMatrix<T>,
    /// `K = −BᵀP`.
    pub k: DMatrix<T>,
    /// Frobenius norm of `PA + AᵀP − PBBᵀP + Q`.
    pub residual_norm: T,
    pub iterations: usize,
}

impl<T: Real> CareProblem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, q: DMatrix<T>) -> Result<Self, CareError> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(CareError::Dimension(format!(
                "A is {:?}, expected square",
                a.shape()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(CareError::Dimension(format!(
                "B is {:?}, expected {n}×p",
                b.shape()
            )));
        }
        if q.shape() != (n, n) {
            return Err(CareError::Dimension(format!(
                "Q is {:?}, expected {n}×{n}",
                q.shape()
            )));
        }
        if !is_spd(&q, T::lit(1e-12)) {
            return Err(CareError::QNotPositiveDefinite);
        }
        Ok(Self { a, b, q })
    }

    pub fn residual(&self, p: &DMatrix<T>) -> DMatrix<T> {
        let pb = p * &self.b;
        p * &self.a + self.a.transpose() * p - &pb * pb.transpose() + &self.q
    }
}

/// True iff every eigenvalue of `A` with `Re λ ≥ 0` passes the PBH test
/// `rank [A − λI, B] = n`.
pub fn is_stabilizable<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    let n = a.nrows();
    assert!(
        a.is_square() && b.nrows() == n,
        "inconsistent (A, B) dimensions"
    );
    let p = b.ncols();
    let margin = T::default_epsilon().sqrt() * a.norm().max(T::one());
    complex_eigenvalues(a)
        .into_iter()
        .filter(|lam| lam.re >= -margin)
        .all(|lam| {
            let m = DMatrix::<Complex<T>>::from_fn(n, n + p, |i, j| {
                if j < n {
                    let diag = if i == j {
                        lam
                    } else {
                        Complex::new(T::zero(), T::zero())
                    };
                    Complex::new(a[(i, j)], T::zero()) - diag
                } else {
                    Complex::new(b[(i, j - n)], T::zero())
                }
            });
            numerical_rank_complex(&m, T::lit(PBH_RANK_TOL)) == n
        })
}

/// Strictly negative spectral abscissa.
pub fn is_hurwitz<T: Real>(a: &DMatrix<T>) -> bool {
    assert!(a.is_square(), "Hurwitz test needs a square matrix");
    spectral_abscissa(a) < T::zero()
}

/// Stabilizing solution of the CARE; the residual is driven below
/// `tol · max(1, ‖Q‖_F)`. Iteration stops early once the residual has
/// stopped improving for [`STALL_ITERATIONS`] steps.
pub fn solve_care<T: Real>(prob: &CareProblem<T>, tol: T) -> Result<CareSolution<T>, CareError> {
    if !(tol > T::zero()) {
        return Err(CareError::BadTolerance);
    }
    if !is_stabilizable(&prob.a, &prob.b) {
        return Err(CareError::NotStabilizable);
    }
    let target = tol * prob.q.norm().max(T::one());
    let mut k = initial_stabilizing_gain(&prob.a, &prob.b)?;
    let mut residual = T::max_value().expect("bounded scalar");
    let mut best = residual;
    let mut stalled = 0;
    let mut iterations = 0;

    for it in 1..=MAX_NEWTON_ITERATIONS {
        let closed = &prob.a + &prob.b * &k;
        let rhs = &prob.q + k.transpose() * &k;
        let p = solve_lyapunov(&closed, &rhs).ok_or(CareError::SingularLyapunov(it))?;
        let p = symmetrize(&p);
        k = -prob.b.transpose() * &p;
        residual = prob.residual(&p).norm();
        if residual <= target {
            if !is_hurwitz(&(&prob.a + &prob.b * &k)) {
                return Err(CareError::NotStabilizing);
            }
            return Ok(CareSolution {
                p,
                k,
                residual_norm: residual,
                iterations: it,
            });
        }
        iterations = it;
        if residual < best * T::lit(0.9) {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_ITERATIONS {
                break;
            }
        }
        best = best.min(residual);
    }
    Err(CareError::NotConverged {
        iterations,
        residual: residual.to_f64_lossy(),
    })
}

/// Gain `K₀` with `A + B·K₀` Hurwitz, assuming `(A, B)` stabilizable.
pub fn initial_stabilizing_gain<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
) -> Result<DMatrix<T>, CareError> {
    let n = a.nrows();
    let p = b.ncols();
    if is_hurwitz(a) {
        return Ok(DMatrix::zeros(p, n));
    }

    // Orthonormal basis ordered [controllable | uncontrollable] from the
    // Gramian-like matrix W = C·Cᵀ of the controllability matrix C.
    let mut ctrb = DMatrix::<T>::zeros(n, n * p);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * p), (n, p)).copy_from(&block);
        block = a * block;
    }
    let scale = ctrb.norm().max(T::default_epsilon());
    let ctrb = ctrb / scale;
    let eig = SymmetricEigen::new(&ctrb * ctrb.transpose());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let top = eig.eigenvalues[order[0]];
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > T::lit(1e-12) * top)
        .count();
    if rank == 0 {
        return Err(CareError::NoInitialGain);
    }
    let basis = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);

    let a_t = basis.transpose() * a * &basis;
    let b_t = basis.transpose() * b;
    let a_cc = a_t.view((0, 0), (rank, rank)).into_owned();
    let b_c = b_t.view((0, 0), (rank, p)).into_owned();

    // Bass: with −(A_cc + βI) Hurwitz, X solving
    // (A_cc + βI)X + X(A_cc + βI)ᵀ = 2·B_c·B_cᵀ is SPD and
    // K_c = −B_cᵀX⁻¹ places the closed loop left of −β.
    let min_re = complex_eigenvalues(&a_cc)
        .iter()
        .map(|z| z.re)
        .fold(T::max_value().expect("bounded scalar"), |acc, v| acc.min(v));
    let shift = (-min_re).max(T::zero()) + T::one();
    let shifted = &a_cc + DMatrix::<T>::identity(rank, rank) * shift;
    let c = &b_c * b_c.transpose() * T::lit(-2.0);
    let x = solve_lyapunov(&shifted.transpose(), &c).ok_or(CareError::NoInitialGain)?;
    let x_inv = symmetrize(&x)
        .try_inverse()
        .ok_or(CareError::NoInitialGain)?;
    let k_c = -b_c.transpose() * x_inv;

    let mut k_t = DMatrix::<T>::zeros(p, n);
    k_t.view_mut((0, 0), (p, rank)).copy_from(&k_c);
    let k0 = k_t * basis.transpose();
    if !is_hurwitz(&(a + b * &k0)) {
        return Err(CareError::NoInitialGain);
    }
    Ok(k0)
}

//! Agent/reference vector fields, the Lipschitz nonlinearity catalogue and
//! the direction maps `h` and `h_ε`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// `(A, B)` of the shared linear part, `A ∈ ℝⁿˣⁿ`, `B ∈ ℝⁿˣᵖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> SystemMatrices<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self, DynamicsError> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(DynamicsError::Dimension(format!("A is {:?}", a.shape())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(DynamicsError::Dimension(format!(
                "B is {:?} but A is {:?}",
                b.shape(),
                a.shape()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Zero,
    Sine,
    Saturation,
}

/// Builtin nonlinearity `f: ℝⁿ × ℝ⁺ → ℝᵖ` acting on the first `p` state
/// components, with `f(0, t) = 0`.
///
/// `scale` is the output amplitude; `gamma` is the Lipschitz constant the
/// field *declares*. For honest fields they coincide; they are kept apart so
/// a mis-declared constant can be caught by [`verify_lipschitz`].
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearField<T: Real> {
    pub kind: FieldKind,
    pub gamma: T,
    pub scale: T,
    pub state_dim: usize,
    pub output_dim: usize,
}

impl<T: Real> NonlinearField<T> {
    pub fn new(
        kind: FieldKind,
        gamma: T,
        state_dim: usize,
        output_dim: usize,
    ) -> Result<Self, DynamicsError> {
        Self::with_scale(kind, gamma, gamma, state_dim, output_dim)
    }

    pub fn with_scale(
        kind: FieldKind,
        gamma: T,
        scale: T,
        state_dim: usize,
        output_dim: usize,
    ) -> Result<Self, DynamicsError> {
        if gamma < T::zero() || !gamma.is_finite_value() || !scale.is_finite_value() {
            return Err(DynamicsError::Parameter(format!(
                "gamma = {gamma}, scale = {scale}"
            )));
        }
        if output_dim == 0 || output_dim > state_dim {
            return Err(DynamicsError::Dimension(format!(
                "field output dimension {output_dim} must lie in 1..={state_dim}"
            )));
        }
        Ok(Self {
            kind,
            gamma,
            scale,
            state_dim,
            output_dim,
        })
    }

    pub fn zero(state_dim: usize, output_dim: usize) -> Result<Self, DynamicsError> {
        Self::new(FieldKind::Zero, T::zero(), state_dim, output_dim)
    }

    pub fn eval(&self, theta: &DVector<T>, _t: T) -> Result<DVector<T>, DynamicsError> {
        if theta.len() != self.state_dim {
            return Err(DynamicsError::Dimension(format!(
                "field expects a {}-vector, got {}",
                self.state_dim,
                theta.len()
            )));
        }
        let p = self.output_dim;
        Ok(match self.kind {
            FieldKind::Zero => DVector::zeros(p),
            FieldKind::Sine => DVector::from_fn(p, |i, _| self.scale * theta[i].sin()),
            FieldKind::Saturation => {
                DVector::from_fn(p, |i, _| self.scale * theta[i].clamp(-T::one(), T::one()))
            }
        })
    }
}

/// Outcome of a randomized Lipschitz spot check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzReport {
    pub holds: bool,
    /// Largest `‖Δf‖ / ‖Δθ‖` observed.
    pub worst_ratio: f64,
}

/// Draws `samples` point pairs in the box `[−radius, radius]ⁿ` and checks
/// `‖f(a) − f(b)‖ ≤ γ‖a − b‖(1 + 1e−12)`.
///
/// Even-indexed pairs are independent uniform draws; odd-indexed pairs put
/// the second point in a small neighbourhood of the first (clipped to the
/// box), where difference quotients approach the local slope.
pub fn verify_lipschitz<T: Real>(
    f: &NonlinearField<T>,
    samples: usize,
    radius: f64,
    seed: u64,
) -> LipschitzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = f.state_dim;
    let gamma = f.gamma.to_f64_lossy();
    let local = radius * 1e-3;
    let mut worst = 0.0f64;
    let mut holds = true;
    for k in 0..samples.max(1) {
        let a: DVector<T> = DVector::from_fn(n, |_, _| T::lit(rng.gen_range(-radius..=radius)));
        let b: DVector<T> = if k % 2 == 0 {
            DVector::from_fn(n, |_, _| T::lit(rng.gen_range(-radius..=radius)))
        } else {
            DVector::from_fn(n, |i, _| {
                let v = a[i].to_f64_lossy() + rng.gen_range(-local..=local);
                T::lit(v.clamp(-radius, radius))
            })
        };
        let dtheta = (&a - &b).norm().to_f64_lossy();
        if dtheta == 0.0 {
            continue;
        }
        let t = T::zero();
        let df = (f.eval(&a, t).expect("dimension") - f.eval(&b, t).expect("dimension"))
            .norm()
            .to_f64_lossy();
        let ratio = df / dtheta;
        worst = worst.max(ratio);
        if df > gamma * dtheta * (1.0 + 1e-12) {
            holds = false;
        }
    }
    LipschitzReport {
        holds,
        worst_ratio: worst,
    }
}

/// Unit direction `x/‖x‖`, with `h(0) = 0`.
pub fn h<T: Real>(x: &DVector<T>) -> DVector<T> {
    let n = x.norm();
    if n > T::zero() {
        x / n
    } else {
        DVector::zeros(x.len())
    }
}

/// Time-varying boundary layer `ε·e^{−ct}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLayer<T: Real> {
    pub epsilon: T,
    pub c: T,
}

impl<T: Real> BoundaryLayer<T> {
    pub fn new(epsilon: T, c: T) -> Result<Self, DynamicsError> {
        if !(epsilon > T::zero()) || !(c > T::zero()) {
            return Err(DynamicsError::Parameter(format!(
                "boundary layer needs epsilon > 0 and c > 0 (got {epsilon}, {c})"
            )));
        }
        Ok(Self { epsilon, c })
    }

    pub fn width(&self, t: T) -> T {
        self.epsilon * (-self.c * t).exp()
    }
}

/// Continuous approximation `x / (‖x‖ + ε·e^{−ct})` of [`h`].
pub fn h_eps<T: Real>(x: &DVector<T>, layer: &BoundaryLayer<T>, t: T) -> DVector<T> {
    x / (x.norm() + layer.width(t))
}

/// Reference generator right-hand side `A·r + B·f(r, t)`.
pub fn reference_rhs<T: Real>(
    mat: &SystemMatrices<T>,
    f: &NonlinearField<T>,
    r: &DVector<T>,
    t: T,
) -> Result<DVector<T>, DynamicsError> {
    if r.len() != mat.state_dim() || f.output_dim != mat.input_dim() {
        return Err(DynamicsError::Dimension(format!(
            "reference of length {} against A {:?}, B {:?}, field output {}",
            r.len(),
            mat.a.shape(),
            mat.b.shape(),
            f.output_dim
        )));
    }
    Ok(&mat.a * r + &mat.b * f.eval(r, t)?)
}

//! Gain synthesis and the three controller/filter families (robust,
//! adaptive, continuous).
//!
//! The coupling term of the control input is `α·ϑᵢ·dir(Σⱼ K₁(pᵢ − pⱼ))`
//! without a leading `B`: `uᵢ ∈ ℝᵖ`, and with this form `B·uᵢ` cancels the
//! filter's coupling exactly in the tracking-error dynamics.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::care::{solve_care, CareError, CareProblem};
use crate::dynamics::{h, h_eps, BoundaryLayer, DynamicsError, SystemMatrices};
use crate::linalg::spectral_norm;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Care(#[from] CareError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Feedback gains and constant coupling parameters of the robust design.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustGains<T: Real> {
    pub k1: DMatrix<T>,
    pub k2: DMatrix<T>,
    pub p1: DMatrix<T>,
    pub p2: DMatrix<T>,
    pub alpha: T,
    pub beta: T,
    pub mu: T,
    pub nu: T,
}

/// Slack added on top of the minimal admissible parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignMargins<T: Real> {
    pub alpha_margin: T,
    pub beta: T,
    pub mu_margin: T,
    pub nu: T,
}

impl<T: Real> DesignMargins<T> {
    fn validate(&self) -> Result<(), ControllerError> {
        if self.alpha_margin < T::zero() || self.mu_margin < T::zero() {
            return Err(ControllerError::Parameter("margins must be >= 0".into()));
        }
        if !(self.beta > T::zero()) || !(self.nu > T::zero()) {
            return Err(ControllerError::Parameter("beta and nu must be > 0".into()));
        }
        Ok(())
    }
}

/// Residual tolerance used for both Riccati solves.
pub fn care_tolerance<T: Real>() -> T {
    T::default_epsilon().sqrt() * T::lit(1e-1)
}

/// Solves both Riccati equations, sets `Kᵢ = −BᵀPᵢ`,
/// `α = γ + ‖BᵀP₁‖₂ + α_margin` and `μ = γ + μ_margin`.
pub fn design_gains<T: Real>(
    mat: &SystemMatrices<T>,
    q1: &DMatrix<T>,
    q2: &DMatrix<T>,
    gamma: T,
    margins: DesignMargins<T>,
) -> Result<RobustGains<T>, ControllerError> {
    margins.validate()?;
    if gamma < T::zero() {
        return Err(ControllerError::Parameter("gamma must be >= 0".into()));
    }
    let tol = care_tolerance::<T>();
    let s1 = solve_care(
        &CareProblem::new(mat.a.clone(), mat.b.clone(), q1.clone())?,
        tol,
    )?;
    let s2 = solve_care(
        &CareProblem::new(mat.a.clone(), mat.b.clone(), q2.clone())?,
        tol,
    )?;
    let bt_p1 = spectral_norm(&(mat.b.transpose() * &s1.p));
    Ok(RobustGains {
        alpha: gamma + bt_p1 + margins.alpha_margin,
        mu: gamma + margins.mu_margin,
        beta: margins.beta,
        nu: margins.nu,
        k1: s1.k,
        k2: s2.k,
        p1: s1.p,
        p2: s2.p,
    })
}

/// Per-node adaptation rates and initial gains.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveParams<T: Real> {
    pub kappa: Vec<T>,
    pub chi: Vec<T>,
    pub mu0: Vec<T>,
    pub alpha0: Vec<T>,
}

impl<T: Real> AdaptiveParams<T> {
    pub fn new(
        kappa: Vec<T>,
        chi: Vec<T>,
        mu0: Vec<T>,
        alpha0: Vec<T>,
    ) -> Result<Self, ControllerError> {
        let n = kappa.len();
        if n == 0 || chi.len() != n || mu0.len() != n || alpha0.len() != n {
            return Err(ControllerError::Parameter(
                "adaptive parameter lists must be non-empty and equally long".into(),
            ));
        }
        if kappa.iter().chain(&chi).any(|&v| !(v > T::zero())) {
            return Err(ControllerError::Parameter(
                "kappa_i and chi_i must be > 0".into(),
            ));
        }
        if mu0.iter().chain(&alpha0).any(|&v| v < T::zero()) {
            return Err(ControllerError::Parameter(
                "initial gains must be >= 0".into(),
            ));
        }
        Ok(Self {
            kappa,
            chi,
            mu0,
            alpha0,
        })
    }

    /// Same scalar values at every node.
    pub fn broadcast(
        n_nodes: usize,
        kappa: T,
        chi: T,
        mu0: T,
        alpha0: T,
    ) -> Result<Self, ControllerError> {
        Self::new(
            vec![kappa; n_nodes],
            vec![chi; n_nodes],
            vec![mu0; n_nodes],
            vec![alpha0; n_nodes],
        )
    }

    pub fn n_nodes(&self) -> usize {
        self.kappa.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerVariant<T: Real> {
    Robust,
    Adaptive(AdaptiveParams<T>),
    Continuous(BoundaryLayer<T>),
}

impl<T: Real> ControllerVariant<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            ControllerVariant::Robust => "robust",
            ControllerVariant::Adaptive(_) => "adaptive",
            ControllerVariant::Continuous(_) => "continuous",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, ControllerVariant::Adaptive(_))
    }

    /// `h` for the discontinuous variants, `h_ε` for the continuous one.
    pub fn direction(&self, v: &DVector<T>, t: T) -> DVector<T> {
        match self {
            ControllerVariant::Continuous(layer) => h_eps(v, layer, t),
            _ => h(v),
        }
    }

    fn coupling_gains(&self, gains: &RobustGains<T>, mu_i: T, alpha_i: T) -> (T, T) {
        match self {
            ControllerVariant::Adaptive(_) => (mu_i, alpha_i),
            _ => (gains.mu, gains.alpha),
        }
    }
}

/// `φᵢ = ‖xᵢ − rᵢ‖ + ν`.
pub fn phi<T: Real>(x_i: &DVector<T>, r_i: &DVector<T>, nu: T) -> T {
    (x_i - r_i).norm() + nu
}

/// `ϑᵢ = ‖rᵢ‖ + β`.
pub fn vartheta<T: Real>(r_i: &DVector<T>, beta: T) -> T {
    r_i.norm() + beta
}

/// `Σⱼ K₁(pᵢ − pⱼ)` over the neighbours of node `i`.
pub fn consensus_signal<T: Real>(
    k1: &DMatrix<T>,
    p_i: &DVector<T>,
    p_neighbors: &[&DVector<T>],
) -> DVector<T> {
    let mut diff = DVector::zeros(p_i.len());
    for pj in p_neighbors {
        diff += p_i - *pj;
    }
    k1 * diff
}

fn check_len<T: Real>(what: &str, v: &DVector<T>, n: usize) -> Result<(), ControllerError> {
    if v.len() != n {
        return Err(DynamicsError::Dimension(format!(
            "{what} has length {}, expected {n}",
            v.len()
        ))
        .into());
    }
    Ok(())
}

/// Filter dynamics
/// `ṡᵢ = A·sᵢ + B·K₁(pᵢ − rᵢ) + α·ϑᵢ·B·dir(Σⱼ K₁(pᵢ − pⱼ))`, `pᵢ = sᵢ + rᵢ`.
#[allow(clippy::too_many_arguments)]
pub fn filter_rhs<T: Real>(
    variant: &ControllerVariant<T>,
    mat: &SystemMatrices<T>,
    gains: &RobustGains<T>,
    s_i: &DVector<T>,
    r_i: &DVector<T>,
    p_neighbors: &[&DVector<T>],
    alpha_i: T,
    t: T,
) -> Result<DVector<T>, ControllerError> {
    let n = mat.state_dim();
    check_len("s_i", s_i, n)?;
    check_len("r_i", r_i, n)?;
    for pj in p_neighbors {
        check_len("p_j", pj, n)?;
    }
    let p_i = s_i + r_i;
    let (_, alpha) = variant.coupling_gains(gains, T::zero(), alpha_i);
    let sigma = consensus_signal(&gains.k1, &p_i, p_neighbors);
    let coupling = variant.direction(&sigma, t) * (alpha * vartheta(r_i, gains.beta));
    Ok(&mat.a * s_i + &mat.b * (&gains.k1 * (&p_i - r_i) + coupling))
}

/// Control input
/// `uᵢ = K₁(pᵢ − rᵢ) + K₂x̃ᵢ + μ·φᵢ·dir(K₂x̃ᵢ) + α·ϑᵢ·dir(Σⱼ K₁(pᵢ − pⱼ))`
/// with `x̃ᵢ = xᵢ − pᵢ`.
#[allow(clippy::too_many_arguments)]
pub fn control_input<T: Real>(
    variant: &ControllerVariant<T>,
    gains: &RobustGains<T>,
    x_i: &DVector<T>,
    p_i: &DVector<T>,
    r_i: &DVector<T>,
    p_neighbors: &[&DVector<T>],
    mu_i: T,
    alpha_i: T,
    t: T,
) -> Result<DVector<T>, ControllerError> {
    let n = gains.k1.ncols();
    check_len("x_i", x_i, n)?;
    check_len("p_i", p_i, n)?;
    check_len("r_i", r_i, n)?;
    for pj in p_neighbors {
        check_len("p_j", pj, n)?;
    }
    let (mu, alpha) = variant.coupling_gains(gains, mu_i, alpha_i);
    let k2_xt = &gains.k2 * (x_i - p_i);
    let sigma = consensus_signal(&gains.k1, p_i, p_neighbors);
    let robust = variant.direction(&k2_xt, t) * (mu * phi(x_i, r_i, gains.nu));
    let coupling = variant.direction(&sigma, t) * (alpha * vartheta(r_i, gains.beta));
    Ok(&gains.k1 * (p_i - r_i) + k2_xt + robust + coupling)
}

/// `(μ̇ᵢ, α̇ᵢ) = (κᵢ·φᵢ·‖K₂x̃ᵢ‖, χᵢ·ϑᵢ·‖Σⱼ K₁(pᵢ − pⱼ)‖)`.
pub fn adaptive_gain_rates<T: Real>(
    params: &AdaptiveParams<T>,
    i: usize,
    k2_xt: &DVector<T>,
    k1_neighbor_sum: &DVector<T>,
    phi_i: T,
    vartheta_i: T,
) -> (T, T) {
    (
        params.kappa[i] * phi_i * k2_xt.norm(),
        params.chi[i] * vartheta_i * k1_neighbor_sum.norm(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn sv(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn scalar_system() -> SystemMatrices<f64> {
        SystemMatrices::new(s(0.0), s(1.0)).unwrap()
    }

    fn margins(beta: f64, nu: f64) -> DesignMargins<f64> {
        DesignMargins {
            alpha_margin: 0.0,
            beta,
            mu_margin: 0.0,
            nu,
        }
    }

    fn scalar_gains(alpha: f64, mu: f64, beta: f64, nu: f64) -> RobustGains<f64> {
        RobustGains {
            k1: s(-1.0),
            k2: s(-1.0),
            p1: s(1.0),
            p2: s(1.0),
            alpha,
            beta,
            mu,
            nu,
        }
    }

    #[test]
    fn design_gains_examples() {
        let g = design_gains(&scalar_system(), &s(1.0), &s(1.0), 0.0, margins(0.1, 0.1)).unwrap();
        assert!((g.k1[(0, 0)] + 1.0).abs() < 1e-10);
        assert!((g.k2[(0, 0)] + 1.0).abs() < 1e-10);
        assert!((g.alpha - 1.0).abs() < 1e-10);
        assert_eq!(g.mu, 0.0);

        let g = design_gains(&scalar_system(), &s(1.0), &s(1.0), 0.5, margins(0.1, 0.1)).unwrap();
        assert_eq!(g.mu, 0.5);

        let bad = SystemMatrices::new(s(1.0), s(0.0)).unwrap();
        assert_eq!(
            design_gains(&bad, &s(1.0), &s(1.0), 0.0, margins(0.1, 0.1)),
            Err(ControllerError::Care(CareError::NotStabilizable))
        );
        assert!(design_gains(&scalar_system(), &s(1.0), &s(1.0), 0.0, margins(0.0, 0.1)).is_err());
    }

    #[test]
    fn state_dependent_parameters() {
        assert_eq!(phi(&sv(1.0), &sv(1.0), 0.1), 0.1);
        let x = DVector::from_row_slice(&[3.0, 4.0]);
        assert_eq!(phi(&x, &DVector::zeros(2), 1.0), 6.0);
        assert_eq!(vartheta(&DVector::zeros(2), 0.5), 0.5);
        assert_eq!(
            vartheta(&DVector::from_row_slice(&[1.0, 2.0, 2.0]), 1.0),
            4.0
        );
    }

    #[test]
    fn filter_rhs_examples() {
        let mat = scalar_system();
        let g = scalar_gains(1.0, 0.0, 0.1, 0.1);
        let out = filter_rhs(
            &ControllerVariant::Robust,
            &mat,
            &g,
            &sv(0.0),
            &sv(0.0),
            &[&sv(0.0)],
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(out, sv(0.0));

        // p_i − p_j = 2, s_i = 0 so p_i = r_i; ϑ_i = ‖r_i‖ + β = 1.
        let g = scalar_gains(1.0, 0.0, 0.5, 0.1);
        let r = sv(0.5);
        let pj = sv(-1.5);
        let out = filter_rhs(
            &ControllerVariant::Robust,
            &mat,
            &g,
            &sv(0.0),
            &r,
            &[&pj],
            0.0,
            0.0,
        )
        .unwrap();
        assert!((out[0] + 1.0).abs() < 1e-15);

        let cont = ControllerVariant::Continuous(BoundaryLayer::new(1.0, 1.0).unwrap());
        let out = filter_rhs(&cont, &mat, &g, &sv(0.0), &r, &[&pj], 0.0, 0.0).unwrap();
        assert!((out[0] + 2.0 / 3.0).abs() < 1e-15);

        assert!(filter_rhs(
            &ControllerVariant::Robust,
            &mat,
            &g,
            &sv(0.0),
            &DVector::zeros(2),
            &[],
            0.0,
            0.0
        )
        .is_err());
    }

    #[test]
    fn control_input_examples() {
        let g = scalar_gains(1.0, 1.0, 0.1, 0.1);
        let z = sv(0.0);
        let u = control_input(
            &ControllerVariant::Robust,
            &g,
            &z,
            &z,
            &z,
            &[&z],
            0.0,
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(u, sv(0.0));

        // x̃ = 2 with p = r = 0, no neighbours; φ = ‖x − r‖ + ν = 2.1.
        let x = sv(2.0);
        let u = control_input(
            &ControllerVariant::Robust,
            &g,
            &x,
            &z,
            &z,
            &[],
            0.0,
            0.0,
            0.0,
        )
        .unwrap();
        assert!((u[0] + 4.1).abs() < 1e-14);

        let cont = ControllerVariant::Continuous(BoundaryLayer::new(2.0, 1.0).unwrap());
        let u = control_input(&cont, &g, &x, &z, &z, &[], 0.0, 0.0, 0.0).unwrap();
        assert!((u[0] + 3.05).abs() < 1e-14);
    }

    #[test]
    fn adaptive_variant_uses_node_gains() {
        let g = scalar_gains(100.0, 100.0, 0.1, 0.1);
        let params = AdaptiveParams::broadcast(1, 1.0, 1.0, 0.0, 0.0).unwrap();
        let ad = ControllerVariant::Adaptive(params);
        let x = sv(2.0);
        let z = sv(0.0);
        let u = control_input(&ad, &g, &x, &z, &z, &[], 1.0, 0.0, 0.0).unwrap();
        assert!((u[0] + 4.1).abs() < 1e-14);
    }

    #[test]
    fn gain_rate_examples() {
        let p = AdaptiveParams::new(vec![2.0], vec![1.0], vec![0.0], vec![0.0]).unwrap();
        assert_eq!(
            adaptive_gain_rates(&p, 0, &sv(0.0), &sv(0.0), 1.0, 1.0),
            (0.0, 0.0)
        );
        let (dmu, _) = adaptive_gain_rates(&p, 0, &sv(2.0), &sv(0.0), 1.5, 1.0);
        assert_eq!(dmu, 6.0);
        let (_, dalpha) = adaptive_gain_rates(&p, 0, &sv(0.0), &sv(-0.5), 1.0, 2.0);
        assert_eq!(dalpha, 1.0);
        assert!(AdaptiveParams::new(vec![0.0], vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(AdaptiveParams::new(vec![1.0], vec![1.0, 2.0], vec![0.0], vec![0.0]).is_err());
    }
}

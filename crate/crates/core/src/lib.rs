//! Distributed average tracking for multi-agent systems whose agents and
//! reference generators share a linear part plus a Lipschitz nonlinearity.
//!
//! The crate covers the full loop: Riccati-based gain synthesis ([`care`],
//! [`controller`]), a deterministic RK4 network simulator ([`sim`]), and
//! post-hoc certificates over the resulting trajectories ([`analysis`]).
//! Numeric code is generic over [`Real`] (`f32`/`f64`); graph matrices can
//! also be built over signed integers for exact checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod care;
pub mod controller;
pub mod dynamics;
pub mod export;
pub mod graph;
pub mod linalg;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use analysis::{AnalysisReport, ChatteringReport, DecayFit};
pub use care::{is_hurwitz, is_stabilizable, solve_care, CareError, CareProblem, CareSolution};
pub use controller::{design_gains, AdaptiveParams, ControllerVariant, DesignMargins, RobustGains};
pub use dynamics::{h, h_eps, BoundaryLayer, FieldKind, NonlinearField, SystemMatrices};
pub use graph::{averaging_projector, Orientation, UndirectedGraph};
pub use scalar::Real;
pub use scenario::{ScenarioError, ScenarioFile, SCHEMA_VERSION};

pub use sim::{simulate, Scenario, SimError, Trajectory};

pub type CareProblem64 = CareProblem<f64>;
pub type CareSolution64 = CareSolution<f64>;
pub type RobustGains64 = RobustGains<f64>;
pub type Scenario64 = Scenario<f64>;
pub type Trajectory64 = Trajectory<f64>;

pub type CareProblem32 = CareProblem<f32>;
pub type CareSolution32 = CareSolution<f32>;
pub type RobustGains32 = RobustGains<f32>;
pub type Scenario32 = Scenario<f32>;
pub type Trajectory32 = Trajectory<f32>;

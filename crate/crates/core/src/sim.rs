//! Fixed-step RK4 integration of the coupled network: references, filters,
//! agents and (for the adaptive variant) the per-node coupling gains.
//!
//! The robust and adaptive right-hand sides are discontinuous. RK4 is used
//! regardless; trajectories settle into an `O(dt)` band around the sliding
//! surfaces instead of reaching them exactly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::care::is_stabilizable;
use crate::controller::{
    adaptive_gain_rates, consensus_signal, control_input, filter_rhs, phi, vartheta,
    ControllerError, ControllerVariant, RobustGains,
};
use crate::dynamics::{reference_rhs, verify_lipschitz, NonlinearField, SystemMatrices};
use crate::graph::UndirectedGraph;
use crate::linalg::quad_form;
use crate::scalar::Real;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_END: f64 = 20.0;
pub const DEFAULT_MONITOR_STRIDE: usize = 10;

/// Parameters of the load-time Lipschitz spot check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for LipschitzCheck {
    fn default() -> Self {
        Self {
            samples: 10_000,
            radius: 10.0,
            seed: 0,
        }
    }
}

/// A scenario invariant that does not hold.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("Assumption 1 violated: graph not connected")]
    Disconnected,
    #[error("Assumption 2 violated: (A, B) not stabilizable")]
    NotStabilizable,
    #[error("Assumption 3 spot-check failed: observed ratio {worst_ratio:.6} exceeds declared gamma {gamma}")]
    Lipschitz { gamma: f64, worst_ratio: f64 },
    #[error(
        "Assumption 4 violated: max reference norm {observed:.6} exceeds declared bound {bound}"
    )]
    ReferenceUnbounded { observed: f64, bound: f64 },
    #[error("dimension: {0}")]
    Dimension(String),
    #[error("parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Real> {
    pub graph: UndirectedGraph,
    pub matrices: SystemMatrices<T>,
    pub field: NonlinearField<T>,
    pub variant: ControllerVariant<T>,
    pub gains: RobustGains<T>,
    pub x0: Vec<DVector<T>>,
    pub s0: Vec<DVector<T>>,
    pub r0: Vec<DVector<T>>,
    pub t_end: T,
    pub dt: T,
    pub monitor_stride: usize,
    /// Diagnostic mode: `uᵢ ≡ 0` for every agent.
    pub zero_input: bool,
    pub lipschitz_check: LipschitzCheck,
}

impl<T: Real> Scenario<T> {
    /// Every violated invariant; empty means the scenario may be simulated.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n_nodes = self.graph.n_nodes();
        let n = self.matrices.state_dim();
        let p = self.matrices.input_dim();

        if !self.graph.is_connected() {
            out.push(Violation::Disconnected);
        }
        if !is_stabilizable(&self.matrices.a, &self.matrices.b) {
            out.push(Violation::NotStabilizable);
        }
        if self.field.state_dim != n || self.field.output_dim != p {
            out.push(Violation::Dimension(format!(
                "field maps R^{} -> R^{}, system needs R^{n} -> R^{p}",
                self.field.state_dim, self.field.output_dim
            )));
        } else {
            let chk = self.lipschitz_check;
            let rep = verify_lipschitz(&self.field, chk.samples, chk.radius, chk.seed);
            if !rep.holds {
                out.push(Violation::Lipschitz {
                    gamma: self.field.gamma.to_f64_lossy(),
                    worst_ratio: rep.worst_ratio,
                });
            }
        }
        let g = &self.gains;
        if g.k1.shape() != (p, n) || g.k2.shape() != (p, n) {
            out.push(Violation::Dimension(format!("gains must be {p}x{n}")));
        }
        if g.p1.shape() != (n, n) || g.p2.shape() != (n, n) {
            out.push(Violation::Dimension(format!("P1, P2 must be {n}x{n}")));
        }
        if !(g.beta > T::zero()) || !(g.nu > T::zero()) {
            out.push(Violation::Parameter("beta and nu must be > 0".into()));
        }
        for (name, set) in [("x0", &self.x0), ("s0", &self.s0), ("r0", &self.r0)] {
            if set.len() != n_nodes {
                out.push(Violation::Dimension(format!(
                    "{name} has {} entries for {n_nodes} nodes",
                    set.len()
                )));
            } else if let Some(i) = set.iter().position(|v| v.len() != n) {
                out.push(Violation::Dimension(format!(
                    "{name}[{i}] is not a {n}-vector"
                )));
            }
        }
        if let ControllerVariant::Adaptive(params) = &self.variant {
            if params.n_nodes() != n_nodes {
                out.push(Violation::Dimension(format!(
                    "adaptive parameters for {} nodes, graph has {n_nodes}",
                    params.n_nodes()
                )));
            }
        }
        if !(self.dt > T::zero()) || !(self.t_end > T::zero()) || !(self.dt < self.t_end) {
            out.push(Violation::Parameter("need 0 < dt < t_end".into()));
        }
        if self.monitor_stride == 0 {
            out.push(Violation::Parameter(
                "monitor_stride must be positive".into(),
            ));
        }
        out
    }

    /// Number of RK4 steps; the final step lands on `t_end`.
    pub fn n_steps(&self) -> usize {
        let ratio = (self.t_end / self.dt).to_f64_lossy();
        (ratio - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSample<T: Real> {
    pub x: DVector<T>,
    pub s: DVector<T>,
    pub p: DVector<T>,
    pub r: DVector<T>,
    pub u: DVector<T>,
    pub mu: T,
    pub alpha: T,
    /// `‖xᵢ − r̄‖`.
    pub avg_track_err: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub t: T,
    pub nodes: Vec<NodeSample<T>>,
    pub v1: T,
    pub v2: T,
    /// `‖ξ‖` over the stacked consensus error.
    pub consensus_err: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortInfo {
    pub time: f64,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub n_nodes: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub variant: &'static str,
    pub dt: T,
    pub monitor_stride: usize,
    pub samples: Vec<Sample<T>>,
    pub aborted: Option<AbortInfo>,
}

impl<T: Real> Trajectory<T> {
    pub fn times(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn v1(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.v1).collect()
    }

    pub fn v2(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.v2).collect()
    }

    pub fn consensus_err(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.consensus_err).collect()
    }

    pub fn mu_series(&self, node: usize) -> Vec<T> {
        self.samples.iter().map(|s| s.nodes[node].mu).collect()
    }

    pub fn alpha_series(&self, node: usize) -> Vec<T> {
        self.samples.iter().map(|s| s.nodes[node].alpha).collect()
    }

    /// Samples of input channel `ch` at node `node`.
    pub fn input_series(&self, node: usize, ch: usize) -> Vec<T> {
        self.samples.iter().map(|s| s.nodes[node].u[ch]).collect()
    }

    pub fn last(&self) -> &Sample<T> {
        self.samples
            .last()
            .expect("trajectory has at least the initial sample")
    }

    /// `maxᵢ ‖xᵢ(T) − r̄(T)‖` at the last sample.
    pub fn final_tracking_error(&self) -> T {
        self.last()
            .nodes
            .iter()
            .map(|n| n.avg_track_err)
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest `‖rᵢ(t)‖` over all samples and nodes.
    pub fn max_reference_norm(&self) -> T {
        self.samples
            .iter()
            .flat_map(|s| s.nodes.iter().map(|n| n.r.norm()))
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest `ϑᵢ = ‖rᵢ‖ + β` seen at node `i`.
    pub fn vartheta_bound(&self, node: usize, beta: T) -> T {
        self.samples
            .iter()
            .map(|s| vartheta(&s.nodes[node].r, beta))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

#[derive(Debug, Error)]
pub enum SimError<T: Real> {
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("non-finite state at t = {time} (node {node})")]
    NonFinite {
        time: f64,
        node: usize,
        partial: Box<Trajectory<T>>,
    },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Offsets of the node blocks in the integrated state vector
/// `[x | s | r | μ | α]`; the gain blocks exist only for adaptive runs.
#[derive(Debug, Clone, Copy)]
struct Layout {
    nodes: usize,
    n: usize,
    adaptive: bool,
}

impl Layout {
    fn len(&self) -> usize {
        3 * self.nodes * self.n + if self.adaptive { 2 * self.nodes } else { 0 }
    }
    fn x(&self, i: usize) -> usize {
        i * self.n
    }
    fn s(&self, i: usize) -> usize {
        (self.nodes + i) * self.n
    }
    fn r(&self, i: usize) -> usize {
        (2 * self.nodes + i) * self.n
    }
    fn mu(&self, i: usize) -> usize {
        3 * self.nodes * self.n + i
    }
    fn alpha(&self, i: usize) -> usize {
        3 * self.nodes * self.n + self.nodes + i
    }
    fn node_of(&self, idx: usize) -> usize {
        let block = self.nodes * self.n;
        if idx < 3 * block {
            (idx % block) / self.n
        } else {
            (idx - 3 * block) % self.nodes
        }
    }
}

struct System<'a, T: Real> {
    sc: &'a Scenario<T>,
    layout: Layout,
    laplacian: DMatrix<T>,
}

struct Evaluated<T: Real> {
    dy: DVector<T>,
    inputs: Vec<DVector<T>>,
}

impl<'a, T: Real> System<'a, T> {
    fn block(&self, y: &DVector<T>, at: usize) -> DVector<T> {
        y.rows(at, self.layout.n).into_owned()
    }

    fn gains_at(&self, y: &DVector<T>, i: usize) -> (T, T) {
        if self.layout.adaptive {
            (y[self.layout.mu(i)], y[self.layout.alpha(i)])
        } else {
            (self.sc.gains.mu, self.sc.gains.alpha)
        }
    }

    fn eval(&self, t: T, y: &DVector<T>) -> Result<Evaluated<T>, ControllerError> {
        let sc = self.sc;
        let lay = self.layout;
        let mat = &sc.matrices;
        let gains = &sc.gains;
        let xs: Vec<_> = (0..lay.nodes).map(|i| self.block(y, lay.x(i))).collect();
        let ss: Vec<_> = (0..lay.nodes).map(|i| self.block(y, lay.s(i))).collect();
        let rs: Vec<_> = (0..lay.nodes).map(|i| self.block(y, lay.r(i))).collect();
        let ps: Vec<_> = ss.iter().zip(&rs).map(|(s, r)| s + r).collect();

        let mut dy = DVector::zeros(lay.len());
        let mut inputs = Vec::with_capacity(lay.nodes);
        for i in 0..lay.nodes {
            let nbrs: Vec<&DVector<T>> = sc.graph.neighbors(i).iter().map(|&j| &ps[j]).collect();
            let (mu_i, alpha_i) = self.gains_at(y, i);

            let dr = reference_rhs(mat, &sc.field, &rs[i], t).map_err(ControllerError::from)?;
            let ds = filter_rhs(&sc.variant, mat, gains, &ss[i], &rs[i], &nbrs, alpha_i, t)?;
            let u = if sc.zero_input {
                DVector::zeros(mat.input_dim())
            } else {
                control_input(
                    &sc.variant,
                    gains,
                    &xs[i],
                    &ps[i],
                    &rs[i],
                    &nbrs,
                    mu_i,
                    alpha_i,
                    t,
                )?
            };
            let fx = sc.field.eval(&xs[i], t).map_err(ControllerError::from)?;
            let dx = &mat.a * &xs[i] + &mat.b * (fx + &u);

            dy.rows_mut(lay.x(i), lay.n).copy_from(&dx);
            dy.rows_mut(lay.s(i), lay.n).copy_from(&ds);
            dy.rows_mut(lay.r(i), lay.n).copy_from(&dr);

            if let ControllerVariant::Adaptive(params) = &sc.variant {
                let k2_xt = &gains.k2 * (&xs[i] - &ps[i]);
                let sigma = consensus_signal(&gains.k1, &ps[i], &nbrs);
                let (dmu, dalpha) = adaptive_gain_rates(
                    params,
                    i,
                    &k2_xt,
                    &sigma,
                    phi(&xs[i], &rs[i], gains.nu),
                    vartheta(&rs[i], gains.beta),
                );
                dy[lay.mu(i)] = dmu;
                dy[lay.alpha(i)] = dalpha;
            }
            inputs.push(u);
        }
        Ok(Evaluated { dy, inputs })
    }

    fn sample(&self, t: T, y: &DVector<T>) -> Result<Sample<T>, ControllerError> {
        let lay = self.layout;
        let inputs = self.eval(t, y)?.inputs;
        let n = lay.n;
        let mut x_all = DVector::zeros(lay.nodes * n);
        let mut p_all = DVector::zeros(lay.nodes * n);
        let mut r_all = DVector::zeros(lay.nodes * n);
        for i in 0..lay.nodes {
            x_all.rows_mut(i * n, n).copy_from(&self.block(y, lay.x(i)));
            r_all.rows_mut(i * n, n).copy_from(&self.block(y, lay.r(i)));
            let p = self.block(y, lay.s(i)) + self.block(y, lay.r(i));
            p_all.rows_mut(i * n, n).copy_from(&p);
        }
        let xi = consensus_error(&p_all, lay.nodes);
        let x_tilde = &x_all - &p_all;
        let errs = average_tracking_error(&x_all, &r_all, lay.nodes);
        let nodes = (0..lay.nodes)
            .zip(inputs)
            .map(|(i, u)| {
                let (mu, alpha) = self.gains_at(y, i);
                let s = self.block(y, lay.s(i));
                let r = self.block(y, lay.r(i));
                NodeSample {
                    x: self.block(y, lay.x(i)),
                    p: &s + &r,
                    s,
                    r,
                    u,
                    mu,
                    alpha,
                    avg_track_err: errs[i],
                }
            })
            .collect();
        Ok(Sample {
            t,
            nodes,
            v1: lyapunov_v1(&xi, &self.laplacian, &self.sc.gains.p1),
            v2: lyapunov_v2(&x_tilde, &self.sc.gains.p2),
            consensus_err: xi.norm(),
        })
    }
}

/// Integrates the scenario from `t = 0` to `t_end` and records a sample
/// every `monitor_stride` steps plus the final state.
pub fn simulate<T: Real>(sc: &Scenario<T>) -> Result<Trajectory<T>, SimError<T>> {
    let violations = sc.validate();
    if !violations.is_empty() {
        return Err(SimError::Invalid(violations));
    }
    let layout = Layout {
        nodes: sc.graph.n_nodes(),
        n: sc.matrices.state_dim(),
        adaptive: sc.variant.is_adaptive(),
    };
    let system = System {
        sc,
        layout,
        laplacian: sc.graph.laplacian::<T>(),
    };

    let mut y = DVector::zeros(layout.len());
    for i in 0..layout.nodes {
        y.rows_mut(layout.x(i), layout.n).copy_from(&sc.x0[i]);
        y.rows_mut(layout.s(i), layout.n).copy_from(&sc.s0[i]);
        y.rows_mut(layout.r(i), layout.n).copy_from(&sc.r0[i]);
    }
    if let ControllerVariant::Adaptive(params) = &sc.variant {
        for i in 0..layout.nodes {
            y[layout.mu(i)] = params.mu0[i];
            y[layout.alpha(i)] = params.alpha0[i];
        }
    }

    let mut traj = Trajectory {
        n_nodes: layout.nodes,
        state_dim: layout.n,
        input_dim: sc.matrices.input_dim(),
        variant: sc.variant.tag(),
        dt: sc.dt,
        monitor_stride: sc.monitor_stride,
        samples: vec![system.sample(T::zero(), &y)?],
        aborted: None,
    };

    let steps = sc.n_steps();
    let dt = sc.dt;
    let half = dt * T::lit(0.5);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    for k in 1..=steps {
        let t = dt * T::lit((k - 1) as f64);
        let k1 = system.eval(t, &y)?.dy;
        let k2 = system.eval(t + half, &(&y + &k1 * half))?.dy;
        let k3 = system.eval(t + half, &(&y + &k2 * half))?.dy;
        let k4 = system.eval(t + dt, &(&y + &k3 * dt))?.dy;
        y += (k1 + k2 * two + k3 * two + k4) * sixth;

        let t_next = if k == steps {
            sc.t_end
        } else {
            dt * T::lit(k as f64)
        };
        if let Some(idx) = y.iter().position(|v| !v.is_finite_value()) {
            let node = layout.node_of(idx);
            let time = t_next.to_f64_lossy();
            traj.aborted = Some(AbortInfo { time, node });
            return Err(SimError::NonFinite {
                time,
                node,
                partial: Box::new(traj),
            });
        }
        if k % sc.monitor_stride == 0 || k == steps {
            traj.samples.push(system.sample(t_next, &y)?);
        }
    }
    Ok(traj)
}

/// `ξ = (M ⊗ I)p`: per-node deviation from the network mean.
pub fn consensus_error<T: Real>(p_all: &DVector<T>, n_nodes: usize) -> DVector<T> {
    let n = p_all.len() / n_nodes;
    let mut mean = DVector::zeros(n);
    for i in 0..n_nodes {
        mean += p_all.rows(i * n, n);
    }
    mean /= T::lit(n_nodes as f64);
    let mut xi = p_all.clone();
    for i in 0..n_nodes {
        let mut blk = xi.rows_mut(i * n, n);
        blk -= &mean;
    }
    xi
}

/// `V₁ = ξᵀ(L ⊗ P₁)ξ`.
pub fn lyapunov_v1<T: Real>(xi: &DVector<T>, laplacian: &DMatrix<T>, p1: &DMatrix<T>) -> T {
    let n = p1.nrows();
    let nodes = laplacian.nrows();
    let mut acc = T::zero();
    for i in 0..nodes {
        let pxi = p1 * xi.rows(i * n, n);
        for j in 0..nodes {
            let lij = laplacian[(i, j)];
            if lij != T::zero() {
                acc += lij * xi.rows(j * n, n).dot(&pxi);
            }
        }
    }
    acc
}

/// `V₂ = x̃ᵀ(I ⊗ P₂)x̃`.
pub fn lyapunov_v2<T: Real>(x_tilde: &DVector<T>, p2: &DMatrix<T>) -> T {
    let n = p2.nrows();
    (0..x_tilde.len() / n)
        .map(|i| quad_form(p2, &x_tilde.rows(i * n, n).into_owned()))
        .fold(T::zero(), |a, b| a + b)
}

/// `eᵢ = ‖xᵢ − (1/N)Σₖ rₖ‖` for every node.
pub fn average_tracking_error<T: Real>(
    x_all: &DVector<T>,
    r_all: &DVector<T>,
    n_nodes: usize,
) -> Vec<T> {
    let n = x_all.len() / n_nodes;
    let mut mean = DVector::zeros(n);
    for k in 0..n_nodes {
        mean += r_all.rows(k * n, n);
    }
    mean /= T::lit(n_nodes as f64);
    (0..n_nodes)
        .map(|i| (x_all.rows(i * n, n) - &mean).norm())
        .collect()
}

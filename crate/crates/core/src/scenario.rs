//! Declarative scenario files (JSON) and their translation into a
//! simulation-ready [`Scenario`].
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "graph": {"n": 4, "edges": [[0,1],[1,2],[2,3],[3,0]]},
//!   "matrices": {"a": [[0,1],[0,0]], "b": [[0],[1]]},
//!   "field": {"kind": "sine", "gamma": 0.5},
//!   "variant": {"variant": "continuous", "epsilon": 0.5, "c": 1.0},
//!   "gains": {"alpha_margin": 0.1, "beta": 0.1, "mu_margin": 0.1, "nu": 0.1},
//!   "initial": {"x0": {"uniform": [-1, 1]}, "s0": {"uniform": [-1, 1]}, "r0": {"uniform": [-1, 1]}},
//!   "seed": 7
//! }
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::care::is_stabilizable;
use crate::controller::{
    design_gains, AdaptiveParams, ControllerError, ControllerVariant, DesignMargins,
};
use crate::dynamics::{
    verify_lipschitz, BoundaryLayer, DynamicsError, FieldKind, NonlinearField, SystemMatrices,
};
use crate::graph::UndirectedGraph;
use crate::scalar::Real;
use crate::sim::{
    LipschitzCheck, Scenario, Violation, DEFAULT_DT, DEFAULT_MONITOR_STRIDE, DEFAULT_T_END,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Keys accepted by [`apply_overrides`].
pub const OVERRIDE_KEYS: &[&str] = &[
    "dt",
    "t_end",
    "monitor_stride",
    "seed",
    "reference_bound",
    "zero_input",
    "field.gamma",
    "field.scale",
    "gains.alpha_margin",
    "gains.beta",
    "gains.mu_margin",
    "gains.nu",
    "variant.epsilon",
    "variant.c",
    "variant.kappa",
    "variant.chi",
    "variant.mu0",
    "variant.alpha0",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema_version {found} (supported: {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("unknown override key `{key}`; valid keys: {}", OVERRIDE_KEYS.join(", "))]
    UnknownOverride { key: String },
    #[error("malformed override `{0}`, expected key=value")]
    MalformedOverride(String),
    #[error("{0}")]
    Invalid(String),
    #[error("scenario violates its assumptions: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Violations(Vec<Violation>),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

impl From<DynamicsError> for ScenarioError {
    fn from(e: DynamicsError) -> Self {
        ScenarioError::Invalid(e.to_string())
    }
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatricesSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub gamma: f64,
    /// Output amplitude; defaults to `gamma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

/// Scalar applied to every node, or one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerNode {
    fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            PerNode::Scalar(v) => Ok(vec![*v; n]),
            PerNode::List(v) if v.len() == n => Ok(v.clone()),
            PerNode::List(v) => Err(ScenarioError::Invalid(format!(
                "{what} lists {} values for {n} nodes",
                v.len()
            ))),
        }
    }
}

fn zero_gain() -> PerNode {
    PerNode::Scalar(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum VariantSpec {
    Robust {},
    Adaptive {
        kappa: PerNode,
        chi: PerNode,
        #[serde(default = "zero_gain")]
        mu0: PerNode,
        #[serde(default = "zero_gain")]
        alpha0: PerNode,
    },
    Continuous {
        epsilon: f64,
        c: f64,
    },
}

impl VariantSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            VariantSpec::Robust {} => "robust",
            VariantSpec::Adaptive { .. } => "adaptive",
            VariantSpec::Continuous { .. } => "continuous",
        }
    }

    pub fn build<T: Real>(&self, n_nodes: usize) -> Result<ControllerVariant<T>, ScenarioError> {
        Ok(match self {
            VariantSpec::Robust {} => ControllerVariant::Robust,
            VariantSpec::Adaptive {
                kappa,
                chi,
                mu0,
                alpha0,
            } => {
                let cv = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<_>>();
                ControllerVariant::Adaptive(AdaptiveParams::new(
                    cv(kappa.expand(n_nodes, "kappa")?),
                    cv(chi.expand(n_nodes, "chi")?),
                    cv(mu0.expand(n_nodes, "mu0")?),
                    cv(alpha0.expand(n_nodes, "alpha0")?),
                )?)
            }
            VariantSpec::Continuous { epsilon, c } => {
                ControllerVariant::Continuous(BoundaryLayer::new(T::lit(*epsilon), T::lit(*c))?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q2: Option<Vec<Vec<f64>>>,
    pub alpha_margin: f64,
    pub beta: f64,
    pub mu_margin: f64,
    pub nu: f64,
}

/// Explicit per-node vectors or a seeded uniform draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitBlock {
    Explicit(Vec<Vec<f64>>),
    Uniform(UniformInit),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformInit {
    pub uniform: [f64; 2],
    /// Overrides the file-level seed for this block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x0: InitBlock,
    pub s0: InitBlock,
    pub r0: InitBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSpec {
    pub samples: usize,
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_t_end() -> f64 {
    DEFAULT_T_END
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_stride() -> usize {
    DEFAULT_MONITOR_STRIDE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub graph: UndirectedGraph,
    pub matrices: MatricesSpec,
    pub field: FieldSpec,
    pub variant: VariantSpec,
    /// Extra variants for side-by-side comparison runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantSpec>,
    pub gains: GainSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_stride")]
    pub monitor_stride: usize,
    /// Declared bound on `‖rᵢ(t)‖`, audited after the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_bound: Option<f64>,
    #[serde(default)]
    pub zero_input: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzSpec>,
}

/// A scenario together with the design inputs the analysis needs.
#[derive(Debug, Clone)]
pub struct BuiltScenario<T: Real> {
    pub scenario: Scenario<T>,
    pub q1: DMatrix<T>,
    pub q2: DMatrix<T>,
    pub reference_bound: Option<f64>,
}

fn matrix<T: Real>(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<T>, ScenarioError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(ScenarioError::Invalid(format!(
            "{what} must be a non-empty rectangular array"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j])))
}

fn init_vectors<T: Real>(
    block: &InitBlock,
    n_nodes: usize,
    n: usize,
    seed: u64,
    stream: u64,
    what: &str,
) -> Result<Vec<DVector<T>>, ScenarioError> {
    match block {
        InitBlock::Explicit(rows) => {
            if rows.len() != n_nodes || rows.iter().any(|r| r.len() != n) {
                return Err(ScenarioError::Invalid(format!(
                    "{what} must list {n_nodes} vectors of length {n}"
                )));
            }
            Ok(rows
                .iter()
                .map(|r| DVector::from_iterator(n, r.iter().map(|&v| T::lit(v))))
                .collect())
        }
        InitBlock::Uniform(UniformInit {
            uniform: [lo, hi],
            seed: own,
        }) => {
            if !(lo <= hi) {
                return Err(ScenarioError::Invalid(format!(
                    "{what}: empty uniform range"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(own.unwrap_or(seed));
            rng.set_stream(stream);
            Ok((0..n_nodes)
                .map(|_| DVector::from_fn(n, |_, _| T::lit(rng.gen_range(*lo..=*hi))))
                .collect())
        }
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.check_version()
    }

    fn check_version(self) -> Result<Self, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion {
                found: self.schema_version,
            });
        }
        Ok(self)
    }

    pub fn from_value(value: Value) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            serde_json::from_value(value).map_err(|e| ScenarioError::Parse {
                line: 0,
                column: 0,
                message: e.to_string(),
            })?;
        file.check_version()
    }

    /// Parses `text`, applies dotted-path `key=value` overrides, then
    /// deserializes.
    pub fn from_json_with_overrides(
        text: &str,
        overrides: &[String],
    ) -> Result<Self, ScenarioError> {
        if overrides.is_empty() {
            return Self::from_json(text);
        }
        let mut value: Value = serde_json::from_str(text)?;
        apply_overrides(&mut value, overrides)?;
        Self::from_value(value)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn lipschitz_check(&self) -> LipschitzCheck {
        self.lipschitz
            .as_ref()
            .map(|l| LipschitzCheck {
                samples: l.samples,
                radius: l.radius,
                seed: l.seed,
            })
            .unwrap_or_default()
    }

    fn system<T: Real>(&self) -> Result<(SystemMatrices<T>, NonlinearField<T>), ScenarioError> {
        let mat = SystemMatrices::new(
            matrix(&self.matrices.a, "A")?,
            matrix(&self.matrices.b, "B")?,
        )?;
        let field = NonlinearField::with_scale(
            self.field.kind,
            T::lit(self.field.gamma),
            T::lit(self.field.scale.unwrap_or(self.field.gamma)),
            mat.state_dim(),
            mat.input_dim(),
        )?;
        Ok((mat, field))
    }

    /// Assumption checks that do not need synthesized gains. Structural
    /// errors (bad matrix shapes, bad parameters) surface as `Err`.
    pub fn check<T: Real>(&self) -> Result<Vec<Violation>, ScenarioError> {
        let (mat, field) = self.system::<T>()?;
        let mut out = Vec::new();
        if !self.graph.is_connected() {
            out.push(Violation::Disconnected);
        }
        if !is_stabilizable(&mat.a, &mat.b) {
            out.push(Violation::NotStabilizable);
        }
        let chk = self.lipschitz_check();
        let rep = verify_lipschitz(&field, chk.samples, chk.radius, chk.seed);
        if !rep.holds {
            out.push(Violation::Lipschitz {
                gamma: self.field.gamma,
                worst_ratio: rep.worst_ratio,
            });
        }
        let needs_bound = std::iter::once(&self.variant)
            .chain(&self.variants)
            .any(|v| !matches!(v, VariantSpec::Robust {}));
        if needs_bound && self.reference_bound.is_none() {
            out.push(Violation::Parameter(
                "Assumption 4 requires a declared reference_bound for adaptive/continuous variants"
                    .into(),
            ));
        }
        Ok(out)
    }

    pub fn build<T: Real>(&self) -> Result<BuiltScenario<T>, ScenarioError> {
        self.build_variant(&self.variant)
    }

    /// Builds the scenario with `variant` in place of the file's primary one;
    /// everything else, initial conditions included, is shared.
    pub fn build_variant<T: Real>(
        &self,
        variant: &VariantSpec,
    ) -> Result<BuiltScenario<T>, ScenarioError> {
        let violations = self.check::<T>()?;
        if !violations.is_empty() {
            return Err(ScenarioError::Violations(violations));
        }
        let (mat, field) = self.system::<T>()?;
        let n = mat.state_dim();
        let n_nodes = self.graph.n_nodes();
        let q1 = match &self.gains.q1 {
            Some(q) => matrix(q, "gains.q1")?,
            None => DMatrix::identity(n, n),
        };
        let q2 = match &self.gains.q2 {
            Some(q) => matrix(q, "gains.q2")?,
            None => DMatrix::identity(n, n),
        };
        let margins = DesignMargins {
            alpha_margin: T::lit(self.gains.alpha_margin),
            beta: T::lit(self.gains.beta),
            mu_margin: T::lit(self.gains.mu_margin),
            nu: T::lit(self.gains.nu),
        };
        let gains = design_gains(&mat, &q1, &q2, field.gamma, margins)?;
        let init = &self.initial;
        let scenario = Scenario {
            x0: init_vectors(&init.x0, n_nodes, n, self.seed, 0, "x0")?,
            s0: init_vectors(&init.s0, n_nodes, n, self.seed, 1, "s0")?,
            r0: init_vectors(&init.r0, n_nodes, n, self.seed, 2, "r0")?,
            graph: self.graph.clone(),
            variant: variant.build(n_nodes)?,
            matrices: mat,
            field,
            gains,
            t_end: T::lit(self.t_end),
            dt: T::lit(self.dt),
            monitor_stride: self.monitor_stride,
            zero_input: self.zero_input,
            lipschitz_check: self.lipschitz_check(),
        };
        let violations = scenario.validate();
        if !violations.is_empty() {
            return Err(ScenarioError::Violations(violations));
        }
        Ok(BuiltScenario {
            scenario,
            q1,
            q2,
            reference_bound: self.reference_bound,
        })
    }
}

/// Splits `key=value`; the value is parsed as JSON and falls back to a
/// string.
pub fn parse_override(raw: &str) -> Result<(String, Value), ScenarioError> {
    let (key, val) = raw
        .split_once('=')
        .ok_or_else(|| ScenarioError::MalformedOverride(raw.to_string()))?;
    let key = key.trim();
    if !OVERRIDE_KEYS.contains(&key) {
        return Err(ScenarioError::UnknownOverride {
            key: key.to_string(),
        });
    }
    let val = val.trim();
    let parsed = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
    Ok((key.to_string(), parsed))
}

pub fn apply_overrides(value: &mut Value, overrides: &[String]) -> Result<(), ScenarioError> {
    for raw in overrides {
        let (key, val) = parse_override(raw)?;
        let mut cursor = &mut *value;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor.get_mut(*part).ok_or_else(|| {
                ScenarioError::Invalid(format!("override `{key}`: no `{part}` section"))
            })?;
        }
        let obj = cursor.as_object_mut().ok_or_else(|| {
            ScenarioError::Invalid(format!("override `{key}`: parent is not an object"))
        })?;
        obj.insert(parts[parts.len() - 1].to_string(), val);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CYCLE: &str = r#"{
        "schema_version": 1,
        "graph": {"n": 4, "edges": [[0,1],[1,2],[2,3],[3,0]]},
        "matrices": {"a": [[0,1],[0,0]], "b": [[0],[1]]},
        "field": {"kind": "sine", "gamma": 0.5},
        "variant": {"variant": "robust"},
        "gains": {"alpha_margin": 0.1, "beta": 0.1, "mu_margin": 0.1, "nu": 0.1},
        "initial": {"x0": {"uniform": [-1, 1]}, "s0": {"uniform": [-1, 1]}, "r0": {"uniform": [-1, 1]}},
        "seed": 11,
        "t_end": 1.0,
        "lipschitz": {"samples": 2000, "radius": 10}
    }"#;

    #[test]
    fn parses_and_builds() {
        let file = ScenarioFile::from_json(CYCLE).unwrap();
        let built = file.build::<f64>().unwrap();
        assert_eq!(built.scenario.x0.len(), 4);
        assert!(built
            .scenario
            .x0
            .iter()
            .flatten()
            .all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(built.scenario.x0, built.scenario.s0);
        let again = file.build::<f64>().unwrap();
        assert_eq!(built.scenario, again.scenario);
    }

    #[test]
    fn rejects_unknown_fields_and_versions() {
        let bad = CYCLE.replace("\"seed\": 11", "\"seed\": 11, \"colour\": 3");
        assert!(matches!(
            ScenarioFile::from_json(&bad),
            Err(ScenarioError::Parse { .. })
        ));
        let bad = CYCLE.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            ScenarioFile::from_json(&bad),
            Err(ScenarioError::SchemaVersion { found: 9 })
        ));
        match ScenarioFile::from_json("{\n  \"schema_version\": 1,\n  oops\n}") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides() {
        let file = ScenarioFile::from_json_with_overrides(
            CYCLE,
            &["dt=0.01".into(), "gains.beta=0.3".into()],
        )
        .unwrap();
        assert_eq!(file.dt, 0.01);
        assert_eq!(file.gains.beta, 0.3);
        assert!(matches!(
            ScenarioFile::from_json_with_overrides(CYCLE, &["gains.bogus=1".into()]),
            Err(ScenarioError::UnknownOverride { .. })
        ));
        assert!(matches!(
            ScenarioFile::from_json_with_overrides(CYCLE, &["dt".into()]),
            Err(ScenarioError::MalformedOverride(_))
        ));
    }

    #[test]
    fn violations_named() {
        let split = CYCLE.replace("[[0,1],[1,2],[2,3],[3,0]]", "[[0,1],[2,3]]");
        let file = ScenarioFile::from_json(&split).unwrap();
        let v = file.check::<f64>().unwrap();
        assert_eq!(v, vec![Violation::Disconnected]);
        assert_eq!(
            v[0].to_string(),
            "Assumption 1 violated: graph not connected"
        );

        let lying = CYCLE.replace(r#""gamma": 0.5}"#, r#""gamma": 0.4, "scale": 0.5}"#);
        let file = ScenarioFile::from_json(&lying).unwrap();
        let v = file.check::<f64>().unwrap();
        assert!(v[0]
            .to_string()
            .starts_with("Assumption 3 spot-check failed"));

        let cont = CYCLE.replace(
            r#"{"variant": "robust"}"#,
            r#"{"variant": "continuous", "epsilon": 0.5, "c": 1.0}"#,
        );
        let file = ScenarioFile::from_json(&cont).unwrap();
        assert_eq!(file.check::<f64>().unwrap().len(), 1);
    }

    #[test]
    fn variant_fields_checked() {
        let bad = CYCLE.replace(
            r#"{"variant": "robust"}"#,
            r#"{"variant": "robust", "epsilon": 1}"#,
        );
        assert!(ScenarioFile::from_json(&bad).is_err());
        assert!(
            ScenarioFile::from_json_with_overrides(CYCLE, &["variant.epsilon=0.1".into()]).is_err()
        );
    }

    #[test]
    fn adaptive_broadcast_and_lists() {
        let ad = CYCLE.replace(
            r#"{"variant": "robust"}"#,
            r#"{"variant": "adaptive", "kappa": 1.0, "chi": [1, 2, 3, 4]}"#,
        );
        let file = ScenarioFile::from_json(&ad).unwrap();
        match file.variant.build::<f64>(4).unwrap() {
            ControllerVariant::Adaptive(p) => {
                assert_eq!(p.kappa, vec![1.0; 4]);
                assert_eq!(p.chi, vec![1.0, 2.0, 3.0, 4.0]);
                assert_eq!(p.mu0, vec![0.0; 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(file.variant.build::<f64>(3).is_err());
    }
}

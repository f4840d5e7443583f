//! Problem files: JSON descriptions of a domain, its boundary split, the
//! payoff and the discretization.
//!
//! ```json
//! {
//!   "domain": {"shape": "rectangle", "lo": [0, 0], "hi": [1, 1]},
//!   "boundary": [
//!     {"where": "1 - 1000*abs(x)", "kind": "dirichlet"},
//!     {"where": "1", "kind": "neumann"}
//!   ],
//!   "payoff": "x",
//!   "epsilon": 0.25,
//!   "h": 0.0625,
//!   "solver": {"tol": 1e-10, "max_iters": 100000, "sweep": "gauss-seidel", "init": "mcshane"},
//!   "seed": 7
//! }
//! ```
//!
//! `disk` takes `center` and `radius`, `polygon` takes `vertices`. The
//! `solver` block and every key inside it are optional, as is `seed`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpp::{Init, SolverConfig, Sweep};
use crate::expr::{parse, Expr, SyntaxError};
use crate::geometry::{discretize, BoundaryKind, BoundaryRule, DomainSpec, GeometryError, GridDomain, Point, Shape};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{field}: {reason}")]
    Schema { field: String, reason: String },
    #[error("{field}: {source}")]
    Parse { field: String, source: SyntaxError },
}

impl ProblemError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ProblemError::Schema { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Init>,
}

impl SolverOverrides {
    pub fn apply(&self, epsilon: f64) -> SolverConfig {
        let d = SolverConfig::new(epsilon);
        SolverConfig {
            epsilon,
            tol: self.tol.unwrap_or(d.tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            sweep: self.sweep.unwrap_or(d.sweep),
            init: self.init.unwrap_or(d.init),
        }
    }

    fn is_empty(&self) -> bool {
        *self == SolverOverrides::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub domain: DomainSpec,
    pub payoff: Expr,
    pub epsilon: f64,
    pub h: f64,
    pub solver: SolverOverrides,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
enum RawShape {
    Rectangle { lo: Vec<f64>, hi: Vec<f64> },
    Disk { center: Vec<f64>, radius: f64 },
    Polygon { vertices: Vec<Point> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(rename = "where")]
    region: String,
    kind: BoundaryKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    domain: RawShape,
    boundary: Vec<RawRule>,
    payoff: String,
    epsilon: f64,
    h: f64,
    #[serde(default, skip_serializing_if = "SolverOverrides::is_empty")]
    solver: SolverOverrides,
    #[serde(default)]
    seed: u64,
}

fn parse_field(field: String, src: &str) -> Result<Expr, ProblemError> {
    parse(src).map_err(|source| ProblemError::Parse { field, source })
}

impl ProblemFile {
    /// Parses and validates problem JSON.
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let raw: RawProblem = serde_json::from_str(text).map_err(|e| ProblemError::schema("<json>", e.to_string()))?;
        let shape = match raw.domain {
            RawShape::Rectangle { lo, hi } => Shape::Rectangle { lo, hi },
            RawShape::Disk { center, radius } => Shape::Disk { center, radius },
            RawShape::Polygon { vertices } => Shape::Polygon { vertices },
        };
        shape.validate().map_err(|e| ProblemError::schema("domain", e.to_string()))?;
        let mut rules = Vec::with_capacity(raw.boundary.len());
        for (k, r) in raw.boundary.iter().enumerate() {
            rules.push(BoundaryRule { region: parse_field(format!("boundary[{k}].where"), &r.region)?, kind: r.kind });
        }
        match rules.last() {
            None => return Err(ProblemError::schema("boundary", "at least one rule is required")),
            Some(last) if !last.region.is_constant() => {
                return Err(ProblemError::schema("boundary", "the last rule must be a constant catch-all"))
            }
            _ => {}
        }
        let payoff = parse_field("payoff".into(), &raw.payoff)?;
        if !(raw.h > 0.0 && raw.h.is_finite()) {
            return Err(ProblemError::schema("h", "must be positive"));
        }
        if !(raw.epsilon.is_finite() && raw.epsilon >= 2.0 * raw.h) {
            return Err(ProblemError::schema("epsilon", "must be ≥ 2h"));
        }
        if let Some(tol) = raw.solver.tol {
            if !(tol > 0.0) {
                return Err(ProblemError::schema("solver.tol", "must be positive"));
            }
        }
        if raw.solver.max_iters == Some(0) {
            return Err(ProblemError::schema("solver.max_iters", "must be at least 1"));
        }
        Ok(ProblemFile {
            domain: DomainSpec { shape, boundary_rules: rules },
            payoff,
            epsilon: raw.epsilon,
            h: raw.h,
            solver: raw.solver,
            seed: raw.seed,
        })
    }

    /// Pretty JSON with sorted keys; [`ProblemFile::from_json`] inverts it.
    pub fn to_json(&self) -> String {
        let domain = match &self.domain.shape {
            Shape::Rectangle { lo, hi } => RawShape::Rectangle { lo: lo.clone(), hi: hi.clone() },
            Shape::Disk { center, radius } => RawShape::Disk { center: center.clone(), radius: *radius },
            Shape::Polygon { vertices } => RawShape::Polygon { vertices: vertices.clone() },
        };
        let raw = RawProblem {
            domain,
            boundary: self
                .domain
                .boundary_rules
                .iter()
                .map(|r| RawRule { region: r.region.to_string(), kind: r.kind })
                .collect(),
            payoff: self.payoff.to_string(),
            epsilon: self.epsilon,
            h: self.h,
            solver: self.solver,
            seed: self.seed,
        };
        let value = serde_json::to_value(raw).expect("problem serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.apply(self.epsilon)
    }

    pub fn grid(&self) -> Result<Arc<GridDomain>, GeometryError> {
        discretize(&self.domain, self.h).map(Arc::new)
    }
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemFile, ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io { path: path.display().to_string(), source })?;
    ProblemFile::from_json(&text)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::NodeClass;

    const SQUARE: &str = r#"{
        "domain": {"shape": "rectangle", "lo": [0, 0], "hi": [1, 1]},
        "boundary": [
            {"where": "1 - 1000*abs(x)", "kind": "dirichlet"},
            {"where": "1 - 1000*abs(x - 1)", "kind": "dirichlet"},
            {"where": "1", "kind": "neumann"}
        ],
        "payoff": "x",
        "epsilon": 0.25,
        "h": 0.0625
    }"#;

    fn schema_field(r: Result<ProblemFile, ProblemError>) -> String {
        match r {
            Err(ProblemError::Schema { field, .. }) => field,
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_square() {
        let p = ProblemFile::from_json(SQUARE).unwrap();
        let kinds: Vec<BoundaryKind> = p.domain.boundary_rules.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, [BoundaryKind::Dirichlet, BoundaryKind::Dirichlet, BoundaryKind::Neumann]);
        assert_eq!((p.epsilon, p.h, p.seed), (0.25, 0.0625, 0));
        assert_eq!(p.solver_config(), SolverConfig::new(0.25));
        let g = p.grid().unwrap();
        assert_eq!(g.ids_with(NodeClass::Dirichlet).count(), 34);
    }

    #[test]
    fn validation_gates() {
        let small_eps = SQUARE.replace("\"epsilon\": 0.25", "\"epsilon\": 0.1");
        match ProblemFile::from_json(&small_eps) {
            Err(ProblemError::Schema { field, reason }) => assert_eq!((field.as_str(), reason.as_str()), ("epsilon", "must be ≥ 2h")),
            other => panic!("{other:?}"),
        }
        match ProblemFile::from_json(&SQUARE.replace("\"payoff\": \"x\"", "\"payoff\": \"x +\"")) {
            Err(ProblemError::Parse { field, source }) => assert_eq!((field.as_str(), source.offset), ("payoff", 3)),
            other => panic!("{other:?}"),
        }
        assert_eq!(schema_field(ProblemFile::from_json(&SQUARE.replace("\"h\"", "\"spacing\""))), "<json>");
        assert_eq!(schema_field(ProblemFile::from_json(&SQUARE.replace("\"where\": \"1\"", "\"where\": \"y\""))), "boundary");
        assert_eq!(schema_field(ProblemFile::from_json(&SQUARE.replace("\"hi\": [1, 1]", "\"hi\": [0, 1]"))), "domain");
        let bad_solver = SQUARE.replace("\"h\": 0.0625", "\"h\": 0.0625, \"solver\": {\"sweep\": \"sor\"}");
        assert_eq!(schema_field(ProblemFile::from_json(&bad_solver)), "<json>");
        match ProblemFile::from_json(&SQUARE.replace("\"where\": \"1 - 1000*abs(x)\"", "\"where\": \"1 -\"")) {
            Err(ProblemError::Parse { field, .. }) => assert_eq!(field, "boundary[0].where"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_and_seed() {
        let text = SQUARE.replace(
            "\"h\": 0.0625",
            "\"h\": 0.0625, \"solver\": {\"sweep\": \"jacobi\", \"init\": \"zero\", \"tol\": 1e-8}, \"seed\": 99",
        );
        let p = ProblemFile::from_json(&text).unwrap();
        let cfg = p.solver_config();
        assert_eq!((cfg.sweep, cfg.init, cfg.tol, cfg.max_iters), (Sweep::Jacobi, Init::Zero, 1e-8, SolverConfig::DEFAULT_MAX_ITERS));
        assert_eq!(p.seed, 99);
        assert_eq!(ProblemFile::from_json(&p.to_json()).unwrap(), p);
    }

    fn shapes() -> impl Strategy<Value = Shape> {
        prop_oneof![
            (0.1..5.0f64, 0.1..5.0f64, -3.0..3.0f64).prop_map(|(w, t, o)| Shape::Rectangle { lo: vec![o, -o], hi: vec![o + w, t - o] }),
            (0.1..5.0f64, -3.0..3.0f64).prop_map(|(w, o)| Shape::Rectangle { lo: vec![o], hi: vec![o + w] }),
            (0.1..5.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(r, a, b)| Shape::Disk { center: vec![a, b], radius: r }),
            (0.1..3.0f64, 0.1..3.0f64).prop_map(|(a, b)| Shape::Polygon { vertices: vec![[0.0, 0.0], [a, 0.0], [a, b], [0.0, b]] }),
        ]
    }

    proptest! {
        #[test]
        fn json_round_trip(shape in shapes(),
                           cut in -10.0..10.0f64,
                           payoff in prop::sample::select(vec!["x", "sqrt(x^2 + y^2)", "min(x, 2*y) - 3.5e-3", "-(x - y)^2 / 7"]),
                           h in 1e-3..1.0f64, ratio in 2.0..10.0f64, seed in any::<u64>(),
                           tol in prop::option::of(1e-14..1e-3f64), sweep in prop::option::of(prop::sample::select(vec![Sweep::Jacobi, Sweep::GaussSeidel]))) {
            let p = ProblemFile {
                domain: DomainSpec {
                    shape,
                    boundary_rules: vec![
                        BoundaryRule { region: parse(&format!("x - {}", cut.abs())).unwrap(), kind: BoundaryKind::Dirichlet },
                        BoundaryRule { region: Expr::lit(1.0), kind: BoundaryKind::Neumann },
                    ],
                },
                payoff: parse(payoff).unwrap(),
                epsilon: h * ratio,
                h,
                solver: SolverOverrides { tol, max_iters: None, sweep, init: None },
                seed,
            };
            prop_assert_eq!(ProblemFile::from_json(&p.to_json()).unwrap(), p);
        }
    }
}

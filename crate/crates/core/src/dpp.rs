//! Discrete epsilon-game values as fixed points of the dynamic programming
//! operator
//!
//! ```text
//! (T u)(x) = ( max_{y in B(x)} u(y) + min_{y in B(x)} u(y) ) / 2
//! ```
//!
//! applied at every active non-Dirichlet node, with `u = F` held fixed on
//! Dirichlet nodes. The operator is monotone and nonexpansive in the sup
//! norm but not a contraction, so convergence is certified by the residual
//! `sup |2u - max - min|` evaluated simultaneously over all nodes.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::geometry::{GeometryError, GridDomain, NeighborTable, NodeClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Zero,
    Mcshane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// The solve stops once the certified residual is at most `2 * tol`.
    pub tol: f64,
    pub max_iters: usize,
    pub sweep: Sweep,
    pub init: Init,
}

impl SolverConfig {
    pub const DEFAULT_TOL: f64 = 1e-10;
    pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

    pub fn new(epsilon: f64) -> Self {
        SolverConfig {
            epsilon,
            tol: Self::DEFAULT_TOL,
            max_iters: Self::DEFAULT_MAX_ITERS,
            sweep: Sweep::GaussSeidel,
            init: Init::Mcshane,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (residual {final_residual:e})")]
    NoConvergence { final_residual: f64, iterations: usize },
    #[error("the grid has no dirichlet nodes")]
    EmptyDirichlet,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("evaluating the payoff: {0}")]
    Payoff(#[from] EvalError),
}

/// Nodal values on a grid. Exterior nodes hold `NaN`.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub grid: Arc<GridDomain>,
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub final_residual: f64,
}

impl ValueField {
    /// Samples `f` at every active node.
    pub fn from_fn(grid: Arc<GridDomain>, epsilon: f64, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| if grid.class(i).is_active() { f(grid.point(i)) } else { f64::NAN })
            .collect();
        ValueField { grid, values, epsilon, iterations: 0, final_residual: f64::NAN }
    }

    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    /// Field with every value negated.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// Writes `x,y,class,value` rows for active nodes in ascending id order
    /// with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "class", "value"])?;
        for id in self.grid.active_ids() {
            let p = self.grid.point(id);
            wr.write_record([
                fmt17(p[0]),
                fmt17(p[1]),
                self.grid.class(id).as_str().to_string(),
                fmt17(self.values[id]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a field written by [`ValueField::write_csv`] back onto `grid`.
    pub fn read_csv<R: Read>(grid: Arc<GridDomain>, epsilon: f64, r: R) -> Result<Self, FieldCsvError> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y", "class", "value"] {
            return Err(FieldCsvError::Header(headers.iter().collect::<Vec<_>>().join(",")));
        }
        let mut values = vec![f64::NAN; grid.len()];
        let active: Vec<usize> = grid.active_ids().collect();
        let mut ids = active.into_iter();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let id = ids.next().ok_or(FieldCsvError::ExtraRow(row))?;
            let num = |k: usize| -> Result<f64, FieldCsvError> {
                rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or(FieldCsvError::BadValue(row))
            };
            let p = grid.point(id);
            let (x, y) = (num(0)?, num(1)?);
            if (x - p[0]).abs() > 1e-9 * grid.h() || (y - p[1]).abs() > 1e-9 * grid.h() {
                return Err(FieldCsvError::NodeMismatch(row));
            }
            if rec.get(2) != Some(grid.class(id).as_str()) {
                return Err(FieldCsvError::NodeMismatch(row));
            }
            values[id] = num(3)?;
        }
        if ids.next().is_some() {
            return Err(FieldCsvError::MissingRows);
        }
        Ok(ValueField { grid, values, epsilon, iterations: 0, final_residual: f64::NAN })
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Error)]
pub enum FieldCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header `{0}`")]
    Header(String),
    #[error("row {0}: more rows than active nodes")]
    ExtraRow(usize),
    #[error("fewer rows than active nodes")]
    MissingRows,
    #[error("row {0}: unparsable number")]
    BadValue(usize),
    #[error("row {0}: coordinates or class do not match the grid")]
    NodeMismatch(usize),
}

/// One application of the dynamic programming operator, restricted to the
/// active non-Dirichlet nodes of a grid.
#[derive(Debug, Clone)]
pub struct DppOperator {
    table: NeighborTable,
    free: Vec<usize>,
}

impl DppOperator {
    pub fn new(grid: &GridDomain, epsilon: f64) -> Result<Self, GeometryError> {
        let table = grid.neighbor_table(epsilon)?;
        let free = grid.active_ids().filter(|&i| grid.class(i) != NodeClass::Dirichlet).collect();
        Ok(DppOperator { table, free })
    }

    pub fn table(&self) -> &NeighborTable {
        &self.table
    }

    /// Active non-Dirichlet node ids, ascending.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    #[inline]
    fn extremes(&self, u: &[f64], id: usize) -> (f64, f64) {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for &m in self.table.of(id) {
            let v = u[m as usize];
            hi = hi.max(v);
            lo = lo.min(v);
        }
        (hi, lo)
    }

    /// Simultaneous (Jacobi) application: every free node is updated from `u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let updates: Vec<f64> = self
            .free
            .par_iter()
            .map(|&id| {
                let (hi, lo) = self.extremes(u, id);
                0.5 * (hi + lo)
            })
            .collect();
        let mut out = u.to_vec();
        for (&id, v) in self.free.iter().zip(updates) {
            out[id] = v;
        }
        out
    }

    /// In-place sweep in ascending id order using already-updated values.
    pub fn gauss_seidel(&self, u: &mut [f64]) {
        for &id in &self.free {
            let (hi, lo) = self.extremes(u, id);
            u[id] = 0.5 * (hi + lo);
        }
    }

    /// Signed residual `2u - max - min` at each free node.
    pub fn residuals(&self, u: &[f64]) -> Vec<(usize, f64)> {
        self.free
            .par_iter()
            .map(|&id| {
                let (hi, lo) = self.extremes(u, id);
                (id, 2.0 * u[id] - hi - lo)
            })
            .collect()
    }

    /// Sup norm of the signed residual.
    pub fn residual(&self, u: &[f64]) -> f64 {
        self.free
            .par_iter()
            .map(|&id| {
                let (hi, lo) = self.extremes(u, id);
                (2.0 * u[id] - hi - lo).abs()
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Solves the fixed-point problem on `grid` with Dirichlet data `payoff`.
pub fn solve_dpp(grid: &Arc<GridDomain>, payoff: &Expr, cfg: &SolverConfig) -> Result<ValueField, SolveError> {
    if !(cfg.tol > 0.0) {
        return Err(SolveError::InvalidConfig(format!("tol must be positive, got {}", cfg.tol)));
    }
    if cfg.max_iters == 0 {
        return Err(SolveError::InvalidConfig("max_iters must be at least 1".into()));
    }
    let dirichlet: Vec<usize> = grid.ids_with(NodeClass::Dirichlet).collect();
    if dirichlet.is_empty() {
        return Err(SolveError::EmptyDirichlet);
    }
    let op = DppOperator::new(grid, cfg.epsilon)?;

    let mut u = vec![f64::NAN; grid.len()];
    for &d in &dirichlet {
        u[d] = payoff.eval(grid.point(d))?;
    }
    match cfg.init {
        Init::Zero => {
            for &id in op.free_nodes() {
                u[id] = 0.0;
            }
        }
        Init::Mcshane => mcshane_init(grid, &dirichlet, payoff, op.free_nodes(), &mut u)?,
    }

    let threshold = 2.0 * cfg.tol;
    let mut iterations = 0;
    loop {
        let r = op.residual(&u);
        if r <= threshold {
            return Ok(ValueField { grid: Arc::clone(grid), values: u, epsilon: cfg.epsilon, iterations, final_residual: r });
        }
        if iterations >= cfg.max_iters {
            return Err(SolveError::NoConvergence { final_residual: r, iterations });
        }
        match cfg.sweep {
            Sweep::Jacobi => u = op.apply(&u),
            Sweep::GaussSeidel => op.gauss_seidel(&mut u),
        }
        iterations += 1;
    }
}

/// `u(x) = min_q F(q) + L |x - q|` over Dirichlet nodes `q`, with `L` the
/// sampled Lipschitz constant of the Dirichlet data.
fn mcshane_init(
    grid: &GridDomain,
    dirichlet: &[usize],
    payoff: &Expr,
    free: &[usize],
    u: &mut [f64],
) -> Result<(), SolveError> {
    let pts: Vec<[f64; 2]> = dirichlet.iter().map(|&d| grid.point(d)).collect();
    let lip = match payoff.lipschitz_on(&pts) {
        Ok(l) => l,
        Err(crate::expr::LipschitzError::TooFewNodes(_)) => 0.0,
        Err(crate::expr::LipschitzError::Eval(e)) => return Err(e.into()),
    };
    let data: Vec<f64> = dirichlet.iter().map(|&d| u[d]).collect();
    let updates: Vec<f64> = free
        .par_iter()
        .map(|&id| {
            let p = grid.point(id);
            pts.iter()
                .zip(&data)
                .map(|(q, f)| f + lip * crate::geometry::dist(p, *q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    for (&id, v) in free.iter().zip(updates) {
        u[id] = v;
    }
    Ok(())
}

/// Per-node signed residual `2u - max - min` over free nodes.
pub fn dpp_residual_field(u: &ValueField) -> Result<Vec<(usize, f64)>, GeometryError> {
    let op = DppOperator::new(&u.grid, u.epsilon)?;
    Ok(op.residuals(&u.values))
}

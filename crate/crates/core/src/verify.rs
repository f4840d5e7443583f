//! Numerical certificates for candidate solutions of the mixed problem:
//! finite-difference infinity-Laplacian residuals, boundary residuals, and
//! comparison with quadratic distance functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpp::ValueField;
use crate::expr::{EvalError, Expr};
use crate::geometry::{dist, GridDomain, NodeClass, Point};

/// Slack allowed in comparison inequalities.
pub const COMPARISON_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("node {0} is within delta of a non-interior node")]
    TooCloseToBoundary(usize),
    #[error("node {0} is not an interior node")]
    NotInterior(usize),
    #[error("delta {delta} must be at least the grid spacing {h}")]
    InvalidDelta { delta: f64, h: f64 },
    #[error("invalid comparison set: {0}")]
    InvalidSet(String),
    #[error("comparison precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("evaluating the payoff: {0}")]
    Payoff(#[from] EvalError),
}

/// `phi(x) = a |x - z|^2 + b |x - z| + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDistanceFn {
    pub z: Point,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticDistanceFn {
    pub fn eval(&self, x: Point) -> f64 {
        let r = dist(x, self.z);
        self.a * r * r + self.b * r + self.c
    }

    /// `Q'(r)` at `r = |x - z|`.
    pub fn radial_slope(&self, x: Point) -> f64 {
        2.0 * self.a * dist(x, self.z) + self.b
    }

    pub fn negated(&self) -> Self {
        QuadraticDistanceFn { z: self.z, a: -self.a, b: -self.b, c: -self.c }
    }

    /// `*-increasing` on the set sampled by `points`; `z` belongs to the set
    /// when it is closer than `reach` to one of them.
    pub fn star_increasing_on(&self, points: &[Point], reach: f64) -> bool {
        if points.iter().any(|&p| dist(p, self.z) < reach) {
            self.b == 0.0 && self.a > 0.0
        } else {
            points.iter().all(|&p| self.radial_slope(p) > 0.0)
        }
    }

    pub fn star_decreasing_on(&self, points: &[Point], reach: f64) -> bool {
        self.negated().star_increasing_on(points, reach)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
}

/// Finite-difference gradient and normalized infinity Laplacian at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdStencil {
    pub gradient: Point,
    /// Second difference along the gradient, or the mean of the axis second
    /// differences when the gradient is below the floor.
    pub lap_inf: f64,
    /// `max - min` of the axis second differences; set only in the
    /// degenerate branch.
    pub direction_spread: Option<f64>,
}

fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

fn has_clearance(g: &GridDomain, node: usize, delta: f64) -> bool {
    let h = g.h();
    if g.signed_distance(node) < -(delta + 0.5 * h) {
        return true;
    }
    let (i, j) = g.ij(node);
    let (nx, ny) = g.extent();
    let w = (delta / h).ceil() as usize;
    let x = g.point(node);
    for jj in j.saturating_sub(w)..=(j + w).min(ny - 1) {
        for ii in i.saturating_sub(w)..=(i + w).min(nx - 1) {
            let n = g.id(ii, jj);
            if g.class(n) != NodeClass::Interior && dist(g.point(n), x) <= delta {
                return false;
            }
        }
    }
    true
}

/// Central-difference gradient with spacing `delta` and the second
/// difference of `u` along it. Off-grid samples use bilinear interpolation.
pub fn grad_and_infinity_laplacian_fd(
    u: &ValueField,
    node: usize,
    delta: f64,
    gradient_floor: f64,
) -> Result<FdStencil, VerifyError> {
    let g = &*u.grid;
    if !(delta >= g.h() * (1.0 - 1e-12)) {
        return Err(VerifyError::InvalidDelta { delta, h: g.h() });
    }
    if node >= g.len() || g.class(node) != NodeClass::Interior {
        return Err(VerifyError::NotInterior(node));
    }
    if !has_clearance(g, node, delta) {
        return Err(VerifyError::TooCloseToBoundary(node));
    }
    let x = g.point(node);
    let u0 = u.value(node);
    let at = |dir: Point, s: f64| {
        g.interpolate(&u.values, [x[0] + s * dir[0], x[1] + s * dir[1]])
            .ok_or(VerifyError::TooCloseToBoundary(node))
    };
    let second = |dir: Point| -> Result<(f64, f64), VerifyError> {
        let (up, dn) = (at(dir, delta)?, at(dir, -delta)?);
        Ok(((up - dn) / (2.0 * delta), (up - 2.0 * u0 + dn) / (delta * delta)))
    };
    let axes: &[Point] = if g.dim() == 1 { &[[1.0, 0.0]] } else { &[[1.0, 0.0], [0.0, 1.0]] };
    let mut gradient = [0.0; 2];
    let mut axis_second = Vec::with_capacity(axes.len());
    for (k, &e) in axes.iter().enumerate() {
        let (d1, d2) = second(e)?;
        gradient[k] = d1;
        axis_second.push(d2);
    }
    let gn = norm(gradient);
    if gn < gradient_floor || gn == 0.0 {
        let max = axis_second.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = axis_second.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = axis_second.iter().sum::<f64>() / axis_second.len() as f64;
        return Ok(FdStencil { gradient, lap_inf: mean, direction_spread: Some(max - min) });
    }
    let v = [gradient[0] / gn, gradient[1] / gn];
    let (_, lap_inf) = second(v)?;
    Ok(FdStencil { gradient, lap_inf, direction_spread: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocatedResidual {
    pub node: usize,
    pub point: Point,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub interior_linf_residual: f64,
    pub interior_nodes_checked: usize,
    pub skipped_small_gradient: usize,
    pub skipped_near_boundary: usize,
    pub worst_interior: Option<LocatedResidual>,
    pub max_direction_spread: f64,
    pub neumann_linf_residual: f64,
    pub neumann_nodes_checked: usize,
    pub neumann_skipped: usize,
    pub worst_neumann: Option<LocatedResidual>,
    pub dirichlet_linf_error: f64,
    pub gradient_floor: f64,
    pub delta: f64,
}

/// `1e-6` times the Lipschitz constant of `F` over the Dirichlet nodes
/// (zero when there is only one).
pub fn default_gradient_floor(grid: &GridDomain, payoff: &Expr) -> Result<f64, EvalError> {
    let pts: Vec<Point> = grid.ids_with(NodeClass::Dirichlet).map(|d| grid.point(d)).collect();
    match payoff.lipschitz_on(&pts) {
        Ok(l) => Ok(1e-6 * l),
        Err(crate::expr::LipschitzError::TooFewNodes(_)) => Ok(0.0),
        Err(crate::expr::LipschitzError::Eval(e)) => Err(e),
    }
}

fn worse(best: &mut Option<LocatedResidual>, cand: LocatedResidual) {
    if best.is_none_or(|b| cand.residual > b.residual) {
        *best = Some(cand);
    }
}

/// Interior, Neumann and Dirichlet residuals of `u` for the mixed problem
/// with payoff `F`.
pub fn residual_report(
    u: &ValueField,
    payoff: &Expr,
    delta: f64,
    gradient_floor: f64,
) -> Result<ResidualReport, VerifyError> {
    let g = &*u.grid;
    if !(delta >= g.h() * (1.0 - 1e-12)) {
        return Err(VerifyError::InvalidDelta { delta, h: g.h() });
    }
    let interior: Vec<usize> = g.ids_with(NodeClass::Interior).collect();
    let stencils: Vec<(usize, Result<FdStencil, VerifyError>)> = interior
        .par_iter()
        .map(|&n| (n, grad_and_infinity_laplacian_fd(u, n, delta, gradient_floor)))
        .collect();

    let mut report = ResidualReport {
        interior_linf_residual: 0.0,
        interior_nodes_checked: 0,
        skipped_small_gradient: 0,
        skipped_near_boundary: 0,
        worst_interior: None,
        max_direction_spread: 0.0,
        neumann_linf_residual: 0.0,
        neumann_nodes_checked: 0,
        neumann_skipped: 0,
        worst_neumann: None,
        dirichlet_linf_error: 0.0,
        gradient_floor,
        delta,
    };
    for (n, st) in stencils {
        match st {
            Ok(FdStencil { direction_spread: Some(spread), .. }) => {
                report.skipped_small_gradient += 1;
                report.max_direction_spread = report.max_direction_spread.max(spread);
            }
            Ok(st) => {
                report.interior_nodes_checked += 1;
                worse(&mut report.worst_interior, LocatedResidual { node: n, point: g.point(n), residual: st.lap_inf.abs() });
            }
            Err(VerifyError::TooCloseToBoundary(_)) => report.skipped_near_boundary += 1,
            Err(e) => return Err(e),
        }
    }
    report.interior_linf_residual = report.worst_interior.map_or(0.0, |w| w.residual);

    let s = 2.0 * g.h();
    for n in g.ids_with(NodeClass::Neumann) {
        let (x, nn) = (g.point(n), g.normal(n).expect("neumann node has a normal"));
        match g.interpolate(&u.values, [x[0] - s * nn[0], x[1] - s * nn[1]]) {
            Some(inner) => {
                report.neumann_nodes_checked += 1;
                let r = (u.value(n) - inner).abs() / s;
                worse(&mut report.worst_neumann, LocatedResidual { node: n, point: x, residual: r });
            }
            None => report.neumann_skipped += 1,
        }
    }
    report.neumann_linf_residual = report.worst_neumann.map_or(0.0, |w| w.residual);

    for d in g.ids_with(NodeClass::Dirichlet) {
        let err = (u.value(d) - payoff.eval(g.point(d))?).abs();
        report.dirichlet_linf_error = report.dirichlet_linf_error.max(err);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonOutcome {
    pub passes: bool,
    /// First node of the set (in the given order) violating the inequality.
    pub witness: Option<usize>,
    /// `min (phi - u)` above, `min (u - phi)` below.
    pub margin: f64,
}

/// Nodes of `set` with an axis neighbour that is active but outside `set`.
/// Dirichlet neighbours count, so the closure of the set stays away from
/// the Dirichlet boundary.
pub fn relative_boundary(g: &GridDomain, set: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; g.len()];
    set.iter().for_each(|&n| inside[n] = true);
    set.iter()
        .copied()
        .filter(|&n| g.axis_neighbors(n).any(|m| g.class(m).is_active() && !inside[m]))
        .collect()
}

/// Checks that boundary domination of `u` by `phi` on the relative boundary
/// of `set` propagates into `set`. The centre of `phi` must lie in the
/// closed domain; it counts as inside the set within one grid spacing.
pub fn check_comparison(
    u: &ValueField,
    side: Side,
    set: &[usize],
    phi: &QuadraticDistanceFn,
) -> Result<ComparisonOutcome, VerifyError> {
    let g = &*u.grid;
    if set.is_empty() {
        return Err(VerifyError::InvalidSet("empty".into()));
    }
    for &n in set {
        if n >= g.len() || !matches!(g.class(n), NodeClass::Interior | NodeClass::Neumann) {
            return Err(VerifyError::InvalidSet(format!("node {n} is exterior or dirichlet")));
        }
    }
    let points: Vec<Point> = set.iter().map(|&n| g.point(n)).collect();
    let (monotone, sign_ok) = match side {
        Side::Above => (phi.star_increasing_on(&points, g.h()), phi.a <= 0.0),
        Side::Below => (phi.star_decreasing_on(&points, g.h()), phi.a >= 0.0),
    };
    if !monotone {
        return Err(VerifyError::PreconditionViolated("phi has the wrong *-monotonicity on the set".into()));
    }
    if !sign_ok {
        return Err(VerifyError::PreconditionViolated(format!("quadratic term {} has the wrong sign", phi.a)));
    }
    let gap = |n: usize| match side {
        Side::Above => phi.eval(g.point(n)) - u.value(n),
        Side::Below => u.value(n) - phi.eval(g.point(n)),
    };
    let rim = relative_boundary(g, set);
    if rim.is_empty() {
        return Err(VerifyError::InvalidSet("no relative boundary".into()));
    }
    if let Some(&n) = rim.iter().find(|&&n| gap(n) < -COMPARISON_TOL) {
        return Err(VerifyError::PreconditionViolated(format!("boundary domination fails at node {n}")));
    }
    let mut margin = f64::INFINITY;
    let mut witness = None;
    for &n in set {
        let m = gap(n);
        margin = margin.min(m);
        if witness.is_none() && m < -COMPARISON_TOL {
            witness = Some(n);
        }
    }
    Ok(ComparisonOutcome { passes: witness.is_none(), witness, margin })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonFailure {
    pub trial: usize,
    pub node: usize,
    pub point: Point,
    pub margin: f64,
    pub phi: QuadraticDistanceFn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub side: Side,
    pub trials: usize,
    pub passes: usize,
    pub precondition_rejects: usize,
    pub failures: Vec<ComparisonFailure>,
    pub seed: u64,
}

enum Trial {
    Pass,
    Reject,
    Fail(ComparisonFailure),
}

fn run_trial(u: &ValueField, side: Side, active: &[usize], centers: &[usize], diam: f64, trial: usize, seed: u64) -> Trial {
    let g = &*u.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
    let center = g.point(centers[rng.gen_range(0..centers.len())]);
    let r_max = (diam / 3.0).max(2.0 * g.h());
    let radius = rng.gen_range(2.0 * g.h()..=r_max);
    let set: Vec<usize> = centers.iter().copied().filter(|&n| dist(g.point(n), center) <= radius).collect();

    let z = g.anchor(active[rng.gen_range(0..active.len())]);
    let mag_a: f64 = rng.gen();
    let mag_b: f64 = rng.gen_range(0.0..=2.0);
    let (a, b) = match side {
        Side::Above => (-mag_a, mag_b),
        Side::Below => (mag_a, -mag_b),
    };
    let rim = relative_boundary(g, &set);
    if rim.is_empty() {
        return Trial::Reject;
    }
    let base = QuadraticDistanceFn { z, a, b, c: 0.0 };
    let shifted = rim.iter().map(|&n| u.value(n) - base.eval(g.point(n)));
    let c = match side {
        Side::Above => shifted.fold(f64::NEG_INFINITY, f64::max),
        Side::Below => shifted.fold(f64::INFINITY, f64::min),
    };
    let phi = QuadraticDistanceFn { c, ..base };
    match check_comparison(u, side, &set, &phi) {
        Ok(out) if out.passes => Trial::Pass,
        Ok(out) => {
            let node = out.witness.expect("failing outcome has a witness");
            Trial::Fail(ComparisonFailure { trial, node, point: g.point(node), margin: out.margin, phi })
        }
        Err(_) => Trial::Reject,
    }
}

/// Randomized comparison test: `n_trials` grid balls with random quadratic
/// distance functions pinned to `u` on the relative boundary (margin 0).
/// Centres are anchors of random active nodes. Trial `k` uses seed
/// `seed + k`.
pub fn comparison_sweep(u: &ValueField, side: Side, n_trials: usize, seed: u64) -> SweepReport {
    let g = &*u.grid;
    let active: Vec<usize> = g.active_ids().collect();
    let centers: Vec<usize> = active.iter().copied().filter(|&n| g.class(n) != NodeClass::Dirichlet).collect();
    let mut report = SweepReport { side, trials: n_trials, passes: 0, precondition_rejects: 0, failures: Vec::new(), seed };
    if centers.is_empty() {
        report.precondition_rejects = n_trials;
        return report;
    }
    let diam = {
        let pts: Vec<Point> = active.iter().map(|&n| g.point(n)).collect();
        let ext = |k: usize| {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[k]), h.max(p[k])));
            hi - lo
        };
        ext(0).hypot(ext(1))
    };
    let trials: Vec<Trial> = (0..n_trials)
        .into_par_iter()
        .map(|t| run_trial(u, side, &active, &centers, diam, t, seed))
        .collect();
    for t in trials {
        match t {
            Trial::Pass => report.passes += 1,
            Trial::Reject => report.precondition_rejects += 1,
            Trial::Fail(f) => report.failures.push(f),
        }
    }
    report
}

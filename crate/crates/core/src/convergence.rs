//! Refinement study: solve at `eps_k = eps / 2^k` with `h_k = eps_k / 4`
//! and measure how successive value fields approach each other.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::dpp::{solve_dpp, ValueField};
use crate::expr::Expr;
use crate::geometry::{check_domain_hypothesis, discretize, GridDomain, HypothesisMode, HypothesisReport, NodeClass};
use crate::problem::ProblemFile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub epsilon: f64,
    pub h: f64,
    pub active_nodes: usize,
    pub iterations: usize,
    pub final_residual: f64,
    /// Sup distance to the previous level over nodes of this grid, with the
    /// previous field interpolated from its interior nodes only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_diff_to_previous: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_error: Option<f64>,
    /// `max |u(x) - u(y)| / eps` over active `x` and `y` in the ball of `x`.
    pub discrete_lipschitz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedLevel {
    pub index: usize,
    pub epsilon: f64,
    pub h: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_level: Option<FailedLevel>,
    pub hypothesis: Option<HypothesisReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergenceOptions {
    pub n_levels: usize,
    /// Record wall-clock time per level (makes the report non-reproducible).
    pub timed: bool,
}

fn sup_diff(fine: &ValueField, coarse: &ValueField) -> f64 {
    let cg = &*coarse.grid;
    let masked: Vec<f64> = (0..cg.len())
        .map(|n| if cg.class(n) == NodeClass::Interior { coarse.value(n) } else { f64::NAN })
        .collect();
    let g = &*fine.grid;
    g.active_ids()
        .filter_map(|n| {
            let c = cg.interpolate(&masked, g.point(n))?;
            (!c.is_nan()).then(|| (fine.value(n) - c).abs())
        })
        .fold(0.0, f64::max)
}

fn ball_lipschitz(u: &ValueField) -> f64 {
    let table = u.grid.neighbor_table(u.epsilon).expect("solved with this epsilon");
    u.grid
        .active_ids()
        .flat_map(|n| table.of(n).iter().map(move |&m| (u.value(n) - u.value(m as usize)).abs()))
        .fold(0.0, f64::max)
        / u.epsilon
}

fn exact_error(u: &ValueField, exact: &Expr) -> Option<f64> {
    let g = &*u.grid;
    let mut worst: f64 = 0.0;
    for n in g.active_ids() {
        worst = worst.max((u.value(n) - exact.eval(g.point(n)).ok()?).abs());
    }
    Some(worst)
}

/// Solves `opts.n_levels` refinements of `p`. A failing level ends the study;
/// it is recorded in `failed_level` alongside the completed levels.
pub fn run_convergence(p: &ProblemFile, exact: Option<&Expr>, opts: ConvergenceOptions) -> ConvergenceReport {
    assert!(opts.n_levels >= 2, "a convergence study needs at least two levels");
    let mut report = ConvergenceReport { levels: Vec::new(), failed_level: None, hypothesis: None };
    let mut previous: Option<ValueField> = None;
    for k in 0..opts.n_levels {
        let epsilon = p.epsilon / (1u64 << k) as f64;
        let h = epsilon / 4.0;
        let started = Instant::now();
        let fail = |error: String| FailedLevel { index: k, epsilon, h, error };
        let grid: Arc<GridDomain> = match discretize(&p.domain, h) {
            Ok(g) => Arc::new(g),
            Err(e) => {
                report.failed_level = Some(fail(e.to_string()));
                break;
            }
        };
        if k == 0 {
            report.hypothesis = check_domain_hypothesis(&grid, HypothesisMode::FlatOk).ok();
        }
        let u = match solve_dpp(&grid, &p.payoff, &p.solver.apply(epsilon)) {
            Ok(u) => u,
            Err(e) => {
                report.failed_level = Some(fail(e.to_string()));
                break;
            }
        };
        report.levels.push(LevelReport {
            epsilon,
            h,
            active_nodes: grid.active_ids().count(),
            iterations: u.iterations,
            final_residual: u.final_residual,
            sup_diff_to_previous: previous.as_ref().map(|c| sup_diff(&u, c)),
            exact_error: exact.and_then(|e| exact_error(&u, e)),
            discrete_lipschitz: ball_lipschitz(&u),
            wall_time_s: opts.timed.then(|| started.elapsed().as_secs_f64()),
        });
        previous = Some(u);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    const LINE: &str = r#"{
        "domain": {"shape": "rectangle", "lo": [0], "hi": [1]},
        "boundary": [{"where": "x", "kind": "dirichlet"}, {"where": "1", "kind": "neumann"}],
        "payoff": "1",
        "epsilon": 0.5,
        "h": 0.25
    }"#;

    #[test]
    fn constant_problem_is_exact_at_every_level() {
        let p = ProblemFile::from_json(LINE).unwrap();
        let r = run_convergence(&p, Some(&parse("1").unwrap()), ConvergenceOptions { n_levels: 3, timed: false });
        assert_eq!(r.levels.len(), 3);
        assert!(r.failed_level.is_none());
        for (k, l) in r.levels.iter().enumerate() {
            assert_eq!(l.epsilon, 0.5 / (1 << k) as f64);
            assert_eq!(l.h, l.epsilon / 4.0);
            assert!(l.exact_error.unwrap() <= 1e-10);
            assert_eq!(l.sup_diff_to_previous.is_some(), k > 0);
            assert!(l.wall_time_s.is_none());
        }
    }

    #[test]
    fn two_levels_give_one_diff() {
        let p = ProblemFile::from_json(LINE).unwrap();
        let r = run_convergence(&p, None, ConvergenceOptions { n_levels: 2, timed: true });
        assert_eq!(r.levels.iter().filter(|l| l.sup_diff_to_previous.is_some()).count(), 1);
        assert!(r.levels.iter().all(|l| l.exact_error.is_none() && l.wall_time_s.is_some()));
    }

    #[test]
    fn failing_level_is_recorded() {
        let text = LINE.replace("\"h\": 0.25", "\"h\": 0.25, \"solver\": {\"max_iters\": 3, \"init\": \"zero\"}");
        let p = ProblemFile::from_json(&text).unwrap();
        let r = run_convergence(&p, None, ConvergenceOptions { n_levels: 3, timed: false });
        let f = r.failed_level.unwrap();
        assert_eq!(f.index, r.levels.len());
        assert!(f.error.contains("no convergence"));
    }
}

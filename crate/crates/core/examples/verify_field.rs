//! Residual report and comparison sweeps for the solved square, then the
//! same checks on a deliberately corrupted copy.
//!
//! `cargo run --release --example verify_field`

use tugwar::dpp::solve_dpp;
use tugwar::problem::load_problem;
use tugwar::verify::{comparison_sweep, default_gradient_floor, residual_report, Side};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/problems/square.json"))?;
    let grid = p.grid()?;
    let u = solve_dpp(&grid, &p.payoff, &p.solver_config())?;
    let floor = default_gradient_floor(&grid, &p.payoff)?;

    let r = residual_report(&u, &p.payoff, p.epsilon, floor)?;
    println!(
        "interior {:.2e} over {} nodes, neumann {:.2e}, dirichlet {:.2e}",
        r.interior_linf_residual, r.interior_nodes_checked, r.neumann_linf_residual, r.dirichlet_linf_error
    );
    for side in [Side::Above, Side::Below] {
        let s = comparison_sweep(&u, side, 200, p.seed);
        println!("{side:?}: {} of {} trials pass", s.passes, s.trials);
    }

    let mut bad = u.clone();
    let n = grid.nearest_node([0.5, 0.5]).expect("inside the grid");
    bad.values[n] += 0.1;
    let s = comparison_sweep(&bad, Side::Above, 200, p.seed);
    println!("corrupted: {} failures", s.failures.len());
    if let Some(f) = s.failures.first() {
        println!("  first at {:?}, margin {:.3e}", f.point, f.margin);
    }
    Ok(())
}

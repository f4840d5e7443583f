//! Solves the unit-square problem and prints the value along the midline.
//!
//! `cargo run --example solve_square`

use tugwar::dpp::solve_dpp;
use tugwar::problem::load_problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/problems/square.json"))?;
    let grid = p.grid()?;
    let u = solve_dpp(&grid, &p.payoff, &p.solver_config())?;
    println!("{} sweeps, residual {:.2e}", u.iterations, u.final_residual);
    for k in 0..=8 {
        let x = k as f64 / 8.0;
        let n = grid.nearest_node([x, 0.5]).expect("inside the grid");
        println!("u({x:.3}, 0.5) = {:.6}", u.value(n));
    }
    Ok(())
}

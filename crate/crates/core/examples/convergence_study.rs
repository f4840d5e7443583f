//! Halves epsilon twice on the square, where the exact solution is `x`.
//!
//! `cargo run --release --example convergence_study`

use tugwar::convergence::{run_convergence, ConvergenceOptions};
use tugwar::expr::parse;
use tugwar::problem::load_problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/problems/square.json"))?;
    let exact = parse("x")?;
    let report = run_convergence(&p, Some(&exact), ConvergenceOptions { n_levels: 3, timed: true });
    println!("{:>8} {:>8} {:>10} {:>10} {:>10}", "eps", "nodes", "error", "diff", "seconds");
    for l in &report.levels {
        println!(
            "{:>8.4} {:>8} {:>10.4e} {:>10} {:>10.3}",
            l.epsilon,
            l.active_nodes,
            l.exact_error.unwrap_or(f64::NAN),
            l.sup_diff_to_previous.map_or("-".into(), |d| format!("{d:.4e}")),
            l.wall_time_s.unwrap_or(0.0),
        );
    }
    if let Some(f) = &report.failed_level {
        println!("level {} failed: {}", f.index, f.error);
    }
    Ok(())
}

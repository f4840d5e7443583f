//! Runs the boundary hypothesis check on each bundled domain.
//!
//! `cargo run --example domain_hypothesis`

use tugwar::geometry::{check_domain_hypothesis, HypothesisMode};
use tugwar::problem::load_problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["square", "disk", "l_shape", "neumann_line"] {
        let path = format!("{}/problems/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let grid = load_problem(path)?.grid()?;
        for mode in [HypothesisMode::Strict, HypothesisMode::FlatOk] {
            let r = check_domain_hypothesis(&grid, mode)?;
            println!(
                "{name:>12} {mode:?}: holds={} worst={:+.4} equality_pairs={} direction={:?}",
                r.holds, r.worst_inner_product, r.equality_pairs, r.direction
            );
        }
    }
    Ok(())
}

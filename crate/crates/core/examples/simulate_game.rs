//! Plays the game on the square with optimal and random strategies and
//! compares the mean payoffs with the solved value.
//!
//! `cargo run --release --example simulate_game`

use tugwar::dpp::solve_dpp;
use tugwar::game::{Strategy, TugOfWar};
use tugwar::problem::load_problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = load_problem(concat!(env!("CARGO_MANIFEST_DIR"), "/problems/square.json"))?;
    let grid = p.grid()?;
    let u = solve_dpp(&grid, &p.payoff, &p.solver_config())?;
    let game = TugOfWar::new(grid.clone(), &p.payoff, p.epsilon)?;
    let x0 = grid.nearest_node([0.5, 0.5]).expect("inside the grid");
    println!("dpp value {:.5}", u.value(x0));

    let max = Strategy::GreedyMax(&u);
    let min = Strategy::GreedyMin(&u);
    let plays = [
        ("greedy vs greedy", &max, &min),
        ("random vs greedy", &Strategy::UniformRandom, &min),
        ("greedy vs random", &max, &Strategy::UniformRandom),
    ];
    for (label, one, two) in plays {
        let est = game.estimate_value(x0, one, two, 1_000_000, 20_000, p.seed)?;
        println!("{label}: {:.5} +- {:.5} ({:.1} steps)", est.mean, est.std_error, est.mean_steps);
    }

    let ep = game.simulate(x0, &max, &min, 1_000_000, p.seed)?;
    println!("one episode: {} steps, {:?}", ep.steps, ep.status);
    Ok(())
}

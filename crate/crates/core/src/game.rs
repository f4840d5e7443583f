//! Direct simulation of the epsilon Tug-of-War game.
//!
//! Each turn a fair coin picks the mover, who places the token anywhere in
//! the epsilon-ball of the current node (clamped to the closed domain).
//! The game ends on the first Dirichlet node, paying `F` there. Strategies
//! are Markov: they see only the current node.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dpp::{fmt17, ValueField};
use crate::expr::{EvalError, Expr};
use crate::geometry::{dist, dot, GeometryError, GridDomain, NeighborTable, NodeClass, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    /// Maximizer; moves when the coin shows 1.
    One,
    /// Minimizer; moves when the coin shows 0.
    Two,
}

#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Lowest-id argmax of the reference field over the ball.
    GreedyMax(&'a ValueField),
    /// Lowest-id argmin of the reference field over the ball.
    GreedyMin(&'a ValueField),
    /// Member maximizing `<y - x, v>`, lowest id on ties.
    FixedDirection(Point),
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("node {0} is dirichlet or exterior; no move is defined there")]
    IllegalState(usize),
    #[error("all {0} episodes hit the step cap")]
    AllTruncated(usize),
    #[error("at least one episode is required")]
    NoEpisodes,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("evaluating the payoff: {0}")]
    Payoff(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum EpisodeStatus {
    Absorbed { payoff: f64 },
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start: usize,
    /// `x_0, x_1, ...`; the last entry is the absorbing node unless truncated.
    pub states: Vec<usize>,
    /// `tosses[k]` decided the move from `states[k]` to `states[k + 1]`;
    /// `true` means player one moved.
    pub tosses: Vec<bool>,
    pub status: EpisodeStatus,
    pub steps: usize,
}

impl Episode {
    /// Writes `step,toss,x,y,value` rows; `value` comes from `field` when
    /// given, and the toss column is empty for the starting row.
    pub fn write_csv<W: Write>(&self, grid: &GridDomain, field: Option<&ValueField>, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["step", "toss", "x", "y", "value"])?;
        for (k, &s) in self.states.iter().enumerate() {
            let p = grid.point(s);
            let toss = if k == 0 { String::new() } else { u8::from(self.tosses[k - 1]).to_string() };
            let value = field.map(|f| fmt17(f.value(s))).unwrap_or_default();
            wr.write_record([k.to_string(), toss, fmt17(p[0]), fmt17(p[1]), value])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    #[serde(rename = "n")]
    pub n_episodes: usize,
    pub n_absorbed: usize,
    pub truncated_fraction: f64,
    pub step_cap: usize,
    pub seed: u64,
    pub mean_steps: f64,
}

/// A game instance: grid, Dirichlet payoffs and epsilon-balls.
#[derive(Debug, Clone)]
pub struct TugOfWar {
    grid: Arc<GridDomain>,
    table: NeighborTable,
    payoffs: Vec<f64>,
}

struct Outcome {
    payoff: Option<f64>,
    steps: usize,
}

impl TugOfWar {
    pub fn new(grid: Arc<GridDomain>, payoff: &Expr, epsilon: f64) -> Result<Self, GameError> {
        let table = grid.neighbor_table(epsilon)?;
        let mut payoffs = vec![f64::NAN; grid.len()];
        for d in grid.ids_with(NodeClass::Dirichlet) {
            payoffs[d] = payoff.eval(grid.point(d))?;
        }
        Ok(TugOfWar { grid, table, payoffs })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.table.epsilon()
    }

    pub fn payoff_at(&self, id: usize) -> Option<f64> {
        (self.grid.class(id) == NodeClass::Dirichlet).then(|| self.payoffs[id])
    }

    /// Episode RNG keyed by `(seed, start node)`.
    pub fn episode_rng(seed: u64, start: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start as u64);
        rng
    }

    /// One move by `mover` from `x`.
    pub fn step<R: Rng>(
        &self,
        x: usize,
        mover: Player,
        s_one: &Strategy<'_>,
        s_two: &Strategy<'_>,
        rng: &mut R,
    ) -> Result<usize, GameError> {
        if x >= self.grid.len() || !matches!(self.grid.class(x), NodeClass::Interior | NodeClass::Neumann) {
            return Err(GameError::IllegalState(x));
        }
        let strategy = match mover {
            Player::One => s_one,
            Player::Two => s_two,
        };
        let members = self.table.of(x);
        let pick = |better: &dyn Fn(f64, f64) -> bool, key: &dyn Fn(usize) -> f64| -> usize {
            let mut best = members[0] as usize;
            let mut best_key = key(best);
            for &m in &members[1..] {
                let k = key(m as usize);
                if better(k, best_key) {
                    best = m as usize;
                    best_key = k;
                }
            }
            best
        };
        let next = match strategy {
            Strategy::GreedyMax(f) => pick(&|a, b| a > b, &|m| f.value(m)),
            Strategy::GreedyMin(f) => pick(&|a, b| a < b, &|m| f.value(m)),
            Strategy::FixedDirection(v) => {
                let px = self.grid.point(x);
                pick(&|a, b| a > b, &|m| {
                    let py = self.grid.point(m);
                    dot([py[0] - px[0], py[1] - px[1]], *v)
                })
            }
            Strategy::UniformRandom => members[rng.gen_range(0..members.len())] as usize,
        };
        assert!(
            dist(self.grid.point(x), self.grid.point(next)) <= self.epsilon() * (1.0 + 1e-9),
            "illegal move {x} -> {next}"
        );
        Ok(next)
    }

    fn run<R: Rng>(
        &self,
        x0: usize,
        s_one: &Strategy<'_>,
        s_two: &Strategy<'_>,
        step_cap: usize,
        rng: &mut R,
        mut record: Option<(&mut Vec<usize>, &mut Vec<bool>)>,
    ) -> Result<Outcome, GameError> {
        if x0 >= self.grid.len() || !self.grid.class(x0).is_active() {
            return Err(GameError::IllegalState(x0));
        }
        let mut x = x0;
        let mut steps = 0;
        while self.grid.class(x) != NodeClass::Dirichlet {
            if steps == step_cap {
                return Ok(Outcome { payoff: None, steps });
            }
            let toss: bool = rng.gen();
            let mover = if toss { Player::One } else { Player::Two };
            x = self.step(x, mover, s_one, s_two, rng)?;
            steps += 1;
            if let Some((states, tosses)) = record.as_mut() {
                states.push(x);
                tosses.push(toss);
            }
        }
        Ok(Outcome { payoff: Some(self.payoffs[x]), steps })
    }

    /// Plays one game from `x0`; a deterministic function of all arguments.
    pub fn simulate(
        &self,
        x0: usize,
        s_one: &Strategy<'_>,
        s_two: &Strategy<'_>,
        step_cap: usize,
        seed: u64,
    ) -> Result<Episode, GameError> {
        let mut rng = Self::episode_rng(seed, x0);
        let mut states = vec![x0];
        let mut tosses = Vec::new();
        let out = self.run(x0, s_one, s_two, step_cap, &mut rng, Some((&mut states, &mut tosses)))?;
        let status = match out.payoff {
            Some(payoff) => EpisodeStatus::Absorbed { payoff },
            None => EpisodeStatus::Truncated,
        };
        Ok(Episode { start: x0, states, tosses, status, steps: out.steps })
    }

    /// Monte Carlo estimate of the expected payoff from `x0`. Episode `k`
    /// uses seed `seed + k`; truncated episodes are excluded from the mean.
    pub fn estimate_value(
        &self,
        x0: usize,
        s_one: &Strategy<'_>,
        s_two: &Strategy<'_>,
        step_cap: usize,
        n_episodes: usize,
        seed: u64,
    ) -> Result<ValueEstimate, GameError> {
        if n_episodes == 0 {
            return Err(GameError::NoEpisodes);
        }
        let outcomes: Vec<Outcome> = (0..n_episodes as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = Self::episode_rng(seed.wrapping_add(k), x0);
                self.run(x0, s_one, s_two, step_cap, &mut rng, None)
            })
            .collect::<Result<_, _>>()?;
        let payoffs: Vec<f64> = outcomes.iter().filter_map(|o| o.payoff).collect();
        let absorbed = payoffs.len();
        if absorbed == 0 {
            return Err(GameError::AllTruncated(n_episodes));
        }
        let mean = payoffs.iter().sum::<f64>() / absorbed as f64;
        let var = if absorbed > 1 {
            payoffs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (absorbed - 1) as f64
        } else {
            0.0
        };
        let total_steps: usize = outcomes.iter().map(|o| o.steps).sum();
        Ok(ValueEstimate {
            mean,
            std_error: (var / absorbed as f64).sqrt(),
            n_episodes,
            n_absorbed: absorbed,
            truncated_fraction: (n_episodes - absorbed) as f64 / n_episodes as f64,
            step_cap,
            seed,
            mean_steps: total_steps as f64 / n_episodes as f64,
        })
    }
}

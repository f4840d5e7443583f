pub mod cli;
pub mod convergence;
pub mod dpp;
pub mod expr;
pub mod game;
pub mod geometry;
pub mod problem;
pub mod verify;

//! Distributed Nash equilibrium seeking for constrained multi-cluster games
//! over directed communication graphs.

pub mod graph;
pub mod sets;
pub mod game;
pub mod solver;
pub mod oracle;
pub mod microgrid;
pub mod experiment;

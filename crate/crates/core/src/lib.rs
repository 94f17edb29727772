//! Simulation-based reinforcement learning for automatic playlist
//! generation.
//!
//! The crate trains user-behavior models from listening-session logs, wraps
//! them in a simulated episode environment, trains an action-head DQN agent
//! against the simulator, and scores policies offline with a sequential
//! evaluator, Gaussian-mixture modal summaries, and bootstrap confidence
//! intervals.

pub mod domain;
pub mod env;
pub mod error;
pub mod eval;
pub mod agent;
pub mod cli;
pub mod config;
pub mod data;
pub mod model;
pub mod neural;

pub use domain::{seeded_rng, SimRng};
pub use error::{Result, SimError};

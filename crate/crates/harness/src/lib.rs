//! Experiment driver: config files, the agent training loop, the evaluation
//! protocol with baselines, Q-value diagnostics and CSV/SVG emission.

pub mod config;
pub mod curve;
pub mod diagnose;
pub mod emit;
pub mod eval;
pub mod runner;
pub mod train;

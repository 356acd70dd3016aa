//! Reinforcement-learning-driven active learning for image classification:
//! a from-scratch neural-net engine, MNIST-style data handling, an
//! active-learning MDP environment, uncertainty-sampling baselines and a
//! Double-DQN agent.

pub mod agent;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod env;
pub mod error;
pub mod idx;
pub mod nn;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

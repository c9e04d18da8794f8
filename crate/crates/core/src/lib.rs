//! Concurrent teacher-student PPO on toy partially observable locomotion.

pub mod agent;
pub mod algo;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod rollout;
pub mod train;

pub use error::{Error, Result};

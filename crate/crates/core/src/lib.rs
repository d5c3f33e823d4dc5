//! Per-step hyperparameter scheduling for iterative denoising.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the trainer, search harness
//! and command line use.

pub mod config;
pub mod diffusion;
pub mod environment;
pub mod error;
pub mod hyperspace;
pub mod nets;
pub mod persist;
pub mod pipeline;
pub mod reward;
pub mod scalar;
pub mod search;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Schedule = diffusion::NoiseSchedule<f64>;
pub type Latent = diffusion::LatentState<f64>;
pub type Task = environment::EditTask<f64>;
pub type Episode = environment::EpisodeRecord<f64>;
pub type Reward = reward::RewardConfig<f64>;
pub type Breakdown = reward::RewardBreakdown<f64>;
pub type Search = search::SearchResult<f64>;

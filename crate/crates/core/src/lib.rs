//! Diffusion-model solver for parametric constrained optimization.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the command-line tools use.

pub mod baselines;
pub mod checkpoint;
pub mod codec;
pub mod diffusion;
mod error;
pub mod evaluation;
pub mod linalg;
pub mod neural;
pub mod oracle;
pub mod problems;
pub mod rng;
mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Family = problems::ProblemFamily<f64>;
pub type Instance = problems::Instance<f64>;
pub type Candidate = problems::Candidate<f64>;
pub type Dataset = problems::Dataset<f64>;
pub type Mlp = neural::Mlp<f64>;
pub type NoiseModel = diffusion::NoiseModel<f64>;
pub type Schedule = diffusion::Schedule<f64>;
pub type Regressor = baselines::Regressor<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type Trainer<'a> = trainer::Trainer<'a, f64>;

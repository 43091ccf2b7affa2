//! Network substrate: MLPs with manual gradients, sinusoidal time embedding,
//! and the Adam optimizer.

mod activation;
mod adam;
pub mod gradcheck;
mod mlp;
mod time_embed;

pub use activation::{softplus, Activation};
pub use adam::Adam;
pub use mlp::{BatchNorm, Dense, Mlp, MlpCache, MlpGrads, Pass};
pub use time_embed::{sinusoidal_features, TimeEmbedding};

/// Anything that exposes its trainable values as flat slices in a fixed order.
pub trait ParamSet<S> {
    fn param_slices(&self) -> Vec<&[S]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [S]>;
}

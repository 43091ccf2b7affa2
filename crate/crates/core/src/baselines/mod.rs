//! Comparison methods: DC3, a supervised MLP, and training-free model-based diffusion.

mod correction;
mod mbd;
mod regressor;

pub use correction::{correct_free, correction_vjp, dc3_correct, violation_penalty, CorrectionTrace};
pub use mbd::{mbd_score, mbd_solve, mbd_weights, MbdSettings};
pub use regressor::{train_regressor, Correction, Regressor, RegressorKind};

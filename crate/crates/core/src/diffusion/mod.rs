//! DDPM machinery: schedules, the conditional noise network, reverse sampling.

mod model;
mod sampler;
mod schedule;

pub use model::{NoiseCache, NoiseGrads, NoiseModel, NoisePredictor};
pub use sampler::{denoise_step, sample_candidates, sample_from, sample_rows};
pub use schedule::{Schedule, ScheduleKind};

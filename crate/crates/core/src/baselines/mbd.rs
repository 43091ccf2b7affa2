use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::diffusion::{Schedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::problems::ProblemFamily;
use crate::rng::{self, domain};
use crate::trainer::RunConfig;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbdSettings<S> {
    pub steps: usize,
    pub samples: usize,
    /// Weight of the equality and inequality norms in the score.
    pub lambda: S,
    pub temperature: S,
    /// Weight samples by the raw score instead of `exp(−(p − min p)/τ)`.
    pub raw_weights: bool,
    pub completion: bool,
}

impl<S: Scalar> MbdSettings<S> {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            steps: cfg.mbd_steps,
            samples: cfg.mbd_samples,
            lambda: S::lit(cfg.mbd_lambda),
            temperature: S::lit(cfg.mbd_temperature),
            raw_weights: cfg.mbd_raw_weights,
            completion: cfg.mbd_completion,
        }
    }
}

impl<S: Scalar> Default for MbdSettings<S> {
    fn default() -> Self {
        Self::from_config(&RunConfig::full())
    }
}

/// `f(y) + λ‖Ay − x‖₂ + λ‖ReLU(Gy − h)‖₂`.
pub fn mbd_score<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, y: ArrayView1<S>, lambda: S) -> S {
    fam.objective(y) + lambda * norm2(fam.eq_residual(y, x).view()) + lambda * norm2(fam.violations(y).view())
}

/// Normalized sample weights; all-zero or non-finite weights fall back to uniform.
pub fn mbd_weights<S: Scalar>(scores: &[S], temperature: S, raw: bool) -> Vec<S> {
    let n = S::lit(scores.len() as f64);
    let w: Vec<S> = if raw {
        scores.to_vec()
    } else {
        let best = scores.iter().copied().fold(S::infinity(), S::min);
        scores.iter().map(|&p| (-(p - best) / temperature).exp()).collect()
    };
    let total: S = w.iter().copied().sum();
    if !(total.is_finite() && total.abs() > S::zero()) || w.iter().any(|v| !v.is_finite()) {
        return vec![S::one() / n; scores.len()];
    }
    w.into_iter().map(|v| v / total).collect()
}

/// Training-free reverse process: at step `i` draw `d` points around
/// `z_i / sqrt(ᾱ_i)` with variance `1/ᾱ_i − 1`, score them, and move the center
/// to `sqrt(ᾱ_{i−1})` times their weighted mean.
pub fn mbd_solve<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, st: &MbdSettings<S>, seed: u64, id: u64) -> Result<Array1<S>> {
    if st.steps == 0 || st.samples == 0 {
        return Err(Error::Domain("model-based diffusion needs at least one step and one sample".into()));
    }
    let sched: Schedule<S> = Schedule::new(st.steps, ScheduleKind::Linear)?;
    let dim = if st.completion { fam.n_free() } else { fam.n() };
    let lift = |z: ArrayView1<S>| -> Result<Array1<S>> {
        if st.completion {
            fam.complete(z, x)
        } else {
            Ok(z.to_owned())
        }
    };
    let mut center = rng::normal_vec::<S>(&mut rng::stream(seed, &[domain::MBD, id]), dim);
    for i in (1..=st.steps).rev() {
        let ab = sched.alpha_bar(i);
        let mean = center.mapv(|v| v / ab.sqrt());
        let sd = (S::one() / ab - S::one()).max(S::zero()).sqrt();
        let mut r = rng::stream(seed, &[domain::MBD, id, i as u64]);
        let mut cloud = Array2::zeros((st.samples, dim));
        let mut scores = Vec::with_capacity(st.samples);
        for mut row in cloud.axis_iter_mut(Axis(0)) {
            for (c, &m) in row.iter_mut().zip(&mean) {
                *c = m + sd * rng::normal::<S>(&mut r);
            }
            let y = lift(row.view())?;
            scores.push(mbd_score(fam, x, y.view(), st.lambda));
        }
        let w = mbd_weights(&scores, st.temperature, st.raw_weights);
        let mut next = Array1::zeros(dim);
        for (row, &wi) in cloud.axis_iter(Axis(0)).zip(&w) {
            next.scaled_add(wi, &row);
        }
        center = next.mapv(|v| v * sched.alpha_bar(i - 1).sqrt());
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sampling(format!("model-based diffusion diverged at step {i}")));
        }
    }
    lift(center.view())
}

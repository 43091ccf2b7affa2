use crate::error::{Error, Result};
use crate::Scalar;

/// Shape of the per-step noise variances β₁..β_T.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// β linearly from 1e-4 to 0.02; a single-step schedule uses the 0.02 endpoint.
    Linear,
    /// Squared-cosine ᾱ curve with offset 0.008, β clipped at 0.999.
    Cosine,
    /// Variance-preserving schedule with β_min = 0.1, β_max = 10, designed
    /// for small step counts (ᾱ_T ≈ e^-5 for any T).
    Vp,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Vp => "vp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ScheduleKind::Linear),
            "cosine" => Some(ScheduleKind::Cosine),
            "vp" => Some(ScheduleKind::Vp),
            _ => None,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            ScheduleKind::Linear => 0,
            ScheduleKind::Cosine => 1,
            ScheduleKind::Vp => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(ScheduleKind::Linear),
            1 => Some(ScheduleKind::Cosine),
            2 => Some(ScheduleKind::Vp),
            _ => None,
        }
    }
}

/// Precomputed DDPM schedule. Steps are 1-based; `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<S> {
    kind: ScheduleKind,
    betas: Vec<S>,
    alpha_bars: Vec<S>,
}

impl<S: Scalar> Schedule<S> {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("diffusion schedule needs at least one step".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let (lo, hi) = (1e-4, 0.02);
                if steps == 1 {
                    vec![hi]
                } else {
                    (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
                }
            }
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(1e-8, 0.999)).collect()
            }
            ScheduleKind::Vp => {
                let (b_min, b_max) = (0.1, 10.0);
                let tt = steps as f64;
                (1..=steps)
                    .map(|t| {
                        let a = (-b_min / tt - 0.5 * (b_max - b_min) * (2.0 * t as f64 - 1.0) / (tt * tt)).exp();
                        1.0 - a
                    })
                    .collect()
            }
        };
        Self::from_betas(kind, betas.into_iter().map(S::lit).collect())
    }

    pub fn from_betas(kind: ScheduleKind, betas: Vec<S>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Domain("empty beta schedule".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > S::zero() && b < S::one())) {
            return Err(Error::Domain(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = S::one();
        for &b in &betas {
            prod *= S::one() - b;
            alpha_bars.push(prod);
        }
        Ok(Self { kind, betas, alpha_bars })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Domain(format!("step {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> S {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> S {
        S::one() - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> S {
        if t == 0 {
            S::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Reverse-step standard deviation `η · sqrt((1-ᾱ_{t-1})/(1-ᾱ_t) · β_t)`.
    /// Zero at `t = 1` for every η.
    pub fn sigma(&self, t: usize, eta: S) -> S {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        eta * ((S::one() - ab_prev) / (S::one() - ab) * self.beta(t)).sqrt()
    }

    /// Forward noising `sqrt(ᾱ_t) y0 + sqrt(1-ᾱ_t) ε`.
    pub fn q_sample(&self, y0: &[S], t: usize, eps: &[S]) -> Result<Vec<S>> {
        self.check(t)?;
        if y0.len() != eps.len() {
            return Err(Error::Shape(format!("y0 has {} entries, noise has {}", y0.len(), eps.len())));
        }
        Ok(forward_noise(self.alpha_bar(t), y0, eps))
    }
}

pub(crate) fn forward_noise<S: Scalar>(alpha_bar: S, y0: &[S], eps: &[S]) -> Vec<S> {
    let (a, b) = (alpha_bar.sqrt(), (S::one() - alpha_bar).sqrt());
    y0.iter().zip(eps).map(|(&y, &e)| a * y + b * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_linear() {
        let s = Schedule::<f64>::new(1, ScheduleKind::Linear).unwrap();
        assert_eq!(s.beta(1), 0.02);
        assert_eq!(s.alpha_bar(1), 1.0 - 0.02);
        assert_eq!(s.sigma(1, 1.0), 0.0);
    }

    #[test]
    fn hundred_step_linear_product() {
        let s = Schedule::<f64>::new(100, ScheduleKind::Linear).unwrap();
        let mut prod = 1.0;
        for i in 0..100 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 99.0;
            prod *= 1.0 - beta;
        }
        assert!((s.alpha_bar(100) - prod).abs() < 1e-14);
        // frozen: prod over the linear ramp
        assert!((s.alpha_bar(100) - 0.3641).abs() < 1e-3);
    }

    #[test]
    fn invariants_for_all_kinds() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine, ScheduleKind::Vp] {
            for steps in [1usize, 5, 100] {
                let s = Schedule::<f64>::new(steps, kind).unwrap();
                for t in 1..=steps {
                    assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                    assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "{kind:?} T={steps} t={t}");
                    assert_eq!(s.sigma(t, 0.0), 0.0);
                }
            }
        }
    }

    #[test]
    fn vp_reaches_near_pure_noise() {
        for steps in [5usize, 100] {
            let s = Schedule::<f64>::new(steps, ScheduleKind::Vp).unwrap();
            assert!(s.alpha_bar(steps) < 0.01);
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(Schedule::<f64>::new(0, ScheduleKind::Linear), Err(Error::Domain(_))));
    }

    #[test]
    fn q_sample_cases() {
        let s = Schedule::<f64>::new(10, ScheduleKind::Linear).unwrap();
        let y0 = [1.0, -2.0];
        let ab = s.alpha_bar(4);
        assert_eq!(s.q_sample(&y0, 4, &[0.0, 0.0]).unwrap(), vec![ab.sqrt(), -2.0 * ab.sqrt()]);
        let e = [0.3, 0.7];
        assert_eq!(s.q_sample(&[0.0, 0.0], 4, &e).unwrap(), vec![0.3 * (1.0 - ab).sqrt(), 0.7 * (1.0 - ab).sqrt()]);
        assert_eq!(forward_noise(1.0, &y0, &e), y0.to_vec());
        assert!(matches!(s.q_sample(&y0, 0, &e), Err(Error::Domain(_))));
        assert!(matches!(s.q_sample(&y0, 11, &e), Err(Error::Domain(_))));
    }
}

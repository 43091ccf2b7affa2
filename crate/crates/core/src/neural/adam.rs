use super::ParamSet;
use crate::error::{Error, Result};
use crate::Scalar;

/// First/second moment state of the Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new<P: ParamSet<S>>(params: &P, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
        Self {
            learning_rate: S::lit(learning_rate),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            m: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update. A non-finite gradient aborts the step
    /// without touching parameters or moments.
    pub fn step<P: ParamSet<S>, G: ParamSet<S>>(&mut self, params: &mut P, grads: &G) -> Result<()> {
        let gs = grads.param_slices();
        if gs.len() != self.m.len() || gs.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::Shape("gradient shapes do not match optimizer state".into()));
        }
        if let Some((i, _)) = gs.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training(format!("non-finite gradient in parameter block {i}")));
        }
        let mut ps = params.param_slices_mut();
        if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Shape("parameter shapes do not match gradients".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (blk, (p, g)) in ps.iter_mut().zip(&gs).enumerate() {
            let (m, v) = (&mut self.m[blk], &mut self.v[blk]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

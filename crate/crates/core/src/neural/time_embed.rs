use ndarray::{Array1, Array2, ArrayView2};

use super::{Activation, Mlp, MlpCache, MlpGrads, Pass};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::Scalar;

/// Interleaved `(sin, cos)` features of an integer timestep at geometrically
/// spaced frequencies `10000^(-k/(dim/2))`.
pub fn sinusoidal_features<S: Scalar>(t: usize, dim: usize) -> Array1<S> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    let ln_base = 10000f64.ln();
    for k in 0..half {
        let freq = (-ln_base * k as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[2 * k] = S::lit(arg.sin());
        out[2 * k + 1] = S::lit(arg.cos());
    }
    out
}

/// Sinusoidal step encoding followed by a learned `Linear -> Mish -> Linear` head.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding<S> {
    dim: usize,
    head: Mlp<S>,
}

impl<S: Scalar> TimeEmbedding<S> {
    pub fn new(dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Domain(format!("time embedding width must be even and positive, got {dim}")));
        }
        Ok(Self { dim, head: Mlp::new(&[dim, hidden, dim], Activation::Mish, rng)? })
    }

    pub fn from_head(head: Mlp<S>) -> Result<Self> {
        let dim = head.input_dim();
        if head.output_dim() != dim || dim % 2 != 0 {
            return Err(Error::Shape(format!("time head must map {dim} -> {dim}")));
        }
        Ok(Self { dim, head })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> &Mlp<S> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Mlp<S> {
        &mut self.head
    }

    /// Raw (unprojected) features; `t` must lie in `0..=total`.
    pub fn raw(&self, t: usize, total: usize) -> Result<Array1<S>> {
        if t > total {
            return Err(Error::Domain(format!("timestep {t} outside [0, {total}]")));
        }
        Ok(sinusoidal_features(t, self.dim))
    }

    pub fn embed(&self, t: usize, total: usize) -> Result<Array1<S>> {
        let raw = self.raw(t, total)?;
        self.head.forward_vec(raw.view())
    }

    pub(crate) fn raw_batch(&self, steps: &[usize], total: usize) -> Result<Array2<S>> {
        let mut m = Array2::zeros((steps.len(), self.dim));
        for (i, &t) in steps.iter().enumerate() {
            m.row_mut(i).assign(&self.raw(t, total)?);
        }
        Ok(m)
    }

    pub(crate) fn forward_batch(&self, raw: ArrayView2<S>) -> Result<(Array2<S>, MlpCache<S>)> {
        self.head.forward_cached(raw, Pass::Eval)
    }

    pub(crate) fn backward_batch(&self, cache: &MlpCache<S>, d: ArrayView2<S>) -> Result<MlpGrads<S>> {
        Ok(self.head.backward(cache, d)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_step_features() {
        let f = sinusoidal_features::<f64>(0, 32);
        for k in 0..16 {
            assert_eq!(f[2 * k], 0.0);
            assert_eq!(f[2 * k + 1], 1.0);
        }
    }

    #[test]
    fn unit_amplitude_per_pair() {
        for t in [1usize, 7, 99, 1000] {
            let f = sinusoidal_features::<f64>(t, 32);
            for k in 0..16 {
                assert!((f[2 * k].powi(2) + f[2 * k + 1].powi(2) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distinct_steps_have_distinct_features() {
        let total = 1000;
        let feats: Vec<Array1<f64>> = (0..=total).map(|t| sinusoidal_features(t, 32)).collect();
        for i in 0..=total {
            for j in (i + 1)..=total {
                let d = (&feats[i] - &feats[j]).iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!(d > 1e-6, "features of {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn embedding_is_deterministic_and_range_checked() {
        let mut rng = stream(11, &[0]);
        let emb = TimeEmbedding::<f64>::new(32, 64, &mut rng).unwrap();
        let a = emb.embed(3, 5).unwrap();
        assert_eq!(a, emb.embed(3, 5).unwrap());
        assert_eq!(a.len(), 32);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(matches!(emb.embed(6, 5), Err(Error::Domain(_))));
        assert!(TimeEmbedding::<f64>::new(31, 8, &mut rng).is_err());
    }
}

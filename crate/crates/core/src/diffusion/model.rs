use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::Schedule;
use crate::error::{shape_err, Error, Result};
use crate::neural::{Activation, Mlp, MlpCache, MlpGrads, ParamSet, Pass, TimeEmbedding};
use crate::rng::Rng;
use crate::Scalar;

/// Anything that predicts the injected noise of a diffusion state.
pub trait NoisePredictor<S: Scalar> {
    fn schedule(&self) -> &Schedule<S>;
    fn cond_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// ε̂ for a batch of states that all sit at step `t`.
    fn predict(&self, y_t: ArrayView2<S>, t: usize, cond: ArrayView2<S>) -> Result<Array2<S>>;
}

/// Denoising network ε_θ(y_t, t, x) with its schedule.
///
/// The backbone sees the concatenation `[y_t, time embedding, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<S> {
    pub time: TimeEmbedding<S>,
    pub backbone: Mlp<S>,
    pub schedule: Schedule<S>,
    cond_dim: usize,
    out_dim: usize,
}

/// Gradients congruent with a [`NoiseModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrads<S> {
    pub time: MlpGrads<S>,
    pub backbone: MlpGrads<S>,
}

impl<S: Scalar> NoiseGrads<S> {
    pub fn scale(&mut self, k: S) {
        self.time.scale(k);
        self.backbone.scale(k);
    }
}

pub struct NoiseCache<S> {
    time: MlpCache<S>,
    backbone: MlpCache<S>,
    rows: usize,
}

impl<S: Scalar> NoiseModel<S> {
    /// Four affine layers of width `hidden` in the backbone, Mish after the first three.
    pub fn new(
        out_dim: usize,
        cond_dim: usize,
        hidden: usize,
        time_dim: usize,
        schedule: Schedule<S>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let time = TimeEmbedding::new(time_dim, hidden, rng)?;
        let input = out_dim + time_dim + cond_dim;
        let backbone = Mlp::new(&[input, hidden, hidden, hidden, out_dim], Activation::Mish, rng)?;
        Self::from_parts(time, backbone, schedule, cond_dim, out_dim)
    }

    pub fn from_parts(
        time: TimeEmbedding<S>,
        backbone: Mlp<S>,
        schedule: Schedule<S>,
        cond_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let expected = out_dim + time.dim() + cond_dim;
        if backbone.input_dim() != expected {
            return Err(shape_err("noise backbone input width", expected, backbone.input_dim()));
        }
        if backbone.output_dim() != out_dim {
            return Err(shape_err("noise backbone output width", out_dim, backbone.output_dim()));
        }
        Ok(Self { time, backbone, schedule, cond_dim, out_dim })
    }

    fn check_rows(&self, y_t: ArrayView2<S>, cond: ArrayView2<S>) -> Result<()> {
        if y_t.ncols() != self.out_dim {
            return Err(shape_err("noisy state width", self.out_dim, y_t.ncols()));
        }
        if cond.ncols() != self.cond_dim {
            return Err(shape_err("condition width", self.cond_dim, cond.ncols()));
        }
        if cond.nrows() != y_t.nrows() {
            return Err(shape_err("condition rows", y_t.nrows(), cond.nrows()));
        }
        Ok(())
    }

    /// Forward pass with a per-row step, keeping what [`NoiseModel::backward`] needs.
    pub fn forward_train(
        &self,
        y_t: ArrayView2<S>,
        steps: &[usize],
        cond: ArrayView2<S>,
    ) -> Result<(Array2<S>, NoiseCache<S>)> {
        self.check_rows(y_t, cond)?;
        if steps.len() != y_t.nrows() {
            return Err(shape_err("step count", y_t.nrows(), steps.len()));
        }
        let raw = self.time.raw_batch(steps, self.schedule.steps())?;
        let (temb, tcache) = self.time.forward_batch(raw.view())?;
        let input = concatenate(Axis(1), &[y_t, temb.view(), cond]).map_err(|e| Error::Shape(e.to_string()))?;
        let (out, bcache) = self.backbone.forward_cached(input.view(), Pass::Eval)?;
        Ok((out, NoiseCache { time: tcache, backbone: bcache, rows: y_t.nrows() }))
    }

    pub fn backward(&self, cache: &NoiseCache<S>, d_out: ArrayView2<S>) -> Result<NoiseGrads<S>> {
        if d_out.nrows() != cache.rows {
            return Err(shape_err("output gradient rows", cache.rows, d_out.nrows()));
        }
        let (bgrads, dinput) = self.backbone.backward(&cache.backbone, d_out)?;
        let lo = self.out_dim;
        let hi = lo + self.time.dim();
        let dtemb = dinput.slice(s![.., lo..hi]);
        let tgrads = self.time.backward_batch(&cache.time, dtemb)?;
        Ok(NoiseGrads { time: tgrads, backbone: bgrads })
    }

    pub fn zero_grads(&self) -> NoiseGrads<S> {
        NoiseGrads { time: self.time.head().zero_grads(), backbone: self.backbone.zero_grads() }
    }

    pub fn all_finite(&self) -> bool {
        self.time.head().all_finite() && self.backbone.all_finite()
    }
}

impl<S: Scalar> NoisePredictor<S> for NoiseModel<S> {
    fn schedule(&self) -> &Schedule<S> {
        &self.schedule
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn predict(&self, y_t: ArrayView2<S>, t: usize, cond: ArrayView2<S>) -> Result<Array2<S>> {
        self.check_rows(y_t, cond)?;
        let emb = self.time.embed(t, self.schedule.steps())?;
        let temb = emb.broadcast((y_t.nrows(), emb.len())).expect("row broadcast");
        let input = concatenate(Axis(1), &[y_t, temb, cond]).map_err(|e| Error::Shape(e.to_string()))?;
        self.backbone.forward(input.view())
    }
}

impl<S: Scalar> ParamSet<S> for NoiseModel<S> {
    fn param_slices(&self) -> Vec<&[S]> {
        let mut v = self.time.head().param_slices();
        v.extend(self.backbone.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let NoiseModel { time, backbone, .. } = self;
        let mut v = time.head_mut().param_slices_mut();
        v.extend(backbone.param_slices_mut());
        v
    }
}

impl<S: Scalar> ParamSet<S> for NoiseGrads<S> {
    fn param_slices(&self) -> Vec<&[S]> {
        let mut v = self.time.param_slices();
        v.extend(self.backbone.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let NoiseGrads { time, backbone } = self;
        let mut v = time.param_slices_mut();
        v.extend(backbone.param_slices_mut());
        v
    }
}

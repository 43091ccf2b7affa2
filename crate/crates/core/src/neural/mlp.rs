//! Fully connected network with hand-written reverse mode.
//!
//! Layout: every hidden block is `Dense -> [BatchNorm] -> activation -> [Dropout]`;
//! the output block is a bare `Dense`. Inputs are batches stored row-major
//! (`batch × features`), weights are `fan_in × fan_out`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;

use super::{Activation, ParamSet};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> Dense<S> {
    /// Uniform initialization in `±1/sqrt(fan_in)` for both weights and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| S::lit(rng.random_range(-bound..=bound))),
            bias: Array1::from_shape_fn(fan_out, |_| S::lit(rng.random_range(-bound..=bound))),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn affine(&self, input: ArrayView2<S>) -> Array2<S> {
        let mut z = input.dot(&self.weight);
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub gamma: Array1<S>,
    pub beta: Array1<S>,
    pub running_mean: Array1<S>,
    pub running_var: Array1<S>,
}

impl<S: Scalar> BatchNorm<S> {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// Whether a forward pass uses training-time behaviour (batch statistics,
/// dropout) or deterministic evaluation behaviour.
pub enum Pass<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Debug, Clone)]
struct BlockCache<S> {
    input: Array2<S>,
    /// Post-normalization pre-activation (what the activation saw).
    pre_act: Array2<S>,
    /// Normalized values and per-feature inverse std, when batch norm is on.
    norm: Option<(Array2<S>, Array1<S>, bool)>,
    batch_stats: Option<(Array1<S>, Array1<S>)>,
    dropout_mask: Option<Array2<S>>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache<S> {
    blocks: Vec<BlockCache<S>>,
    last_input: Array2<S>,
}

/// Gradients congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<S> {
    pub weight: Vec<Array2<S>>,
    pub bias: Vec<Array1<S>>,
    pub gamma: Vec<Array1<S>>,
    pub beta: Vec<Array1<S>>,
}

impl<S: Scalar> MlpGrads<S> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += b;
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: S) {
        self.weight.iter_mut().for_each(|a| a.mapv_inplace(|v| v * k));
        self.bias.iter_mut().for_each(|a| a.mapv_inplace(|v| v * k));
        self.gamma.iter_mut().for_each(|a| a.mapv_inplace(|v| v * k));
        self.beta.iter_mut().for_each(|a| a.mapv_inplace(|v| v * k));
    }
}

/// Multilayer perceptron; the parameter block of every network in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    layers: Vec<Dense<S>>,
    norms: Vec<BatchNorm<S>>,
    activation: Activation,
    dropout: f64,
}

impl<S: Scalar> Mlp<S> {
    /// Builds a network with layer widths `widths = [input, hidden.., output]`.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Shape("an MLP needs at least input and output widths".into()));
        }
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self::from_layers(layers, activation)
    }

    pub fn from_layers(layers: Vec<Dense<S>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(shape_err(&format!("bias of layer {i}"), l.fan_out(), l.bias.len()));
            }
        }
        Ok(Self { layers, norms: Vec::new(), activation, dropout: 0.0 })
    }

    /// Adds batch normalization after every hidden affine map.
    pub fn with_batch_norm(mut self) -> Self {
        self.norms = self.layers[..self.layers.len() - 1].iter().map(|l| BatchNorm::new(l.fan_out())).collect();
        self
    }

    /// Dropout probability applied after hidden activations in training passes.
    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn set_norms(&mut self, norms: Vec<BatchNorm<S>>) -> Result<()> {
        if !norms.is_empty() && norms.len() + 1 != self.layers.len() {
            return Err(shape_err("batch-norm count", self.layers.len() - 1, norms.len()));
        }
        self.norms = norms;
        Ok(())
    }

    pub fn layers(&self) -> &[Dense<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<S>] {
        &mut self.layers
    }

    pub fn norms(&self) -> &[BatchNorm<S>] {
        &self.norms
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn has_batch_norm(&self) -> bool {
        !self.norms.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn forward(&self, input: ArrayView2<S>) -> Result<Array2<S>> {
        Ok(self.forward_cached(input, Pass::Eval)?.0)
    }

    pub fn forward_vec(&self, input: ArrayView1<S>) -> Result<Array1<S>> {
        let row = input.insert_axis(Axis(0));
        Ok(self.forward(row)?.row(0).to_owned())
    }

    pub fn forward_cached(&self, input: ArrayView2<S>, pass: Pass<'_>) -> Result<(Array2<S>, MlpCache<S>)> {
        if input.ncols() != self.input_dim() {
            return Err(shape_err("MLP input width", self.input_dim(), input.ncols()));
        }
        let training = matches!(pass, Pass::Train(_));
        let mut rng = match pass {
            Pass::Train(r) => Some(r),
            Pass::Eval => None,
        };
        let mut blocks = Vec::with_capacity(self.layers.len() - 1);
        let mut a = input.to_owned();
        let batch = S::lit(input.nrows().max(1) as f64);
        for (li, layer) in self.layers[..self.layers.len() - 1].iter().enumerate() {
            let mut z = layer.affine(a.view());
            let mut norm = None;
            let mut batch_stats = None;
            if let Some(bn) = self.norms.get(li) {
                let eps = S::lit(BatchNorm::<S>::EPS);
                let (mean, var) = if training {
                    let mean = z.sum_axis(Axis(0)) / batch;
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / batch;
                    batch_stats = Some((mean.clone(), var.clone()));
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.mapv(|v| S::one() / (v + eps).sqrt());
                let xhat = (&z - &mean) * &inv_std;
                z = &xhat * &bn.gamma + &bn.beta;
                norm = Some((xhat, inv_std, training));
            }
            let act = self.activation;
            let mut h = z.mapv(|v| act.apply(v));
            let mut dropout_mask = None;
            if let (Some(r), true) = (rng.as_deref_mut(), self.dropout > 0.0) {
                let keep = 1.0 - self.dropout;
                let scale = S::lit(1.0 / keep);
                let mask = Array2::from_shape_fn(h.raw_dim(), |_| if r.random::<f64>() < keep { scale } else { S::zero() });
                h *= &mask;
                dropout_mask = Some(mask);
            }
            blocks.push(BlockCache { input: a, pre_act: z, norm, batch_stats, dropout_mask });
            a = h;
        }
        let out = self.layers[self.layers.len() - 1].affine(a.view());
        Ok((out, MlpCache { blocks, last_input: a }))
    }

    /// Reverse pass: parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache<S>, output_grad: ArrayView2<S>) -> Result<(MlpGrads<S>, Array2<S>)> {
        let last = &self.layers[self.layers.len() - 1];
        if output_grad.ncols() != last.fan_out() || output_grad.nrows() != cache.last_input.nrows() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                output_grad.nrows(),
                output_grad.ncols(),
                cache.last_input.nrows(),
                last.fan_out()
            )));
        }
        let n = self.layers.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        let mut ggamma = vec![Array1::zeros(0); self.norms.len()];
        let mut gbeta = vec![Array1::zeros(0); self.norms.len()];

        gw[n - 1] = standard(cache.last_input.t().dot(&output_grad));
        gb[n - 1] = output_grad.sum_axis(Axis(0));
        let mut d = output_grad.dot(&last.weight.t());

        for li in (0..n - 1).rev() {
            let block = &cache.blocks[li];
            if let Some(mask) = &block.dropout_mask {
                d *= mask;
            }
            let act = self.activation;
            Zip::from(&mut d).and(&block.pre_act).for_each(|g, &u| *g *= act.derivative(u));
            if let (Some(bn), Some((xhat, inv_std, batch_mode))) = (self.norms.get(li), &block.norm) {
                ggamma[li] = (&d * xhat).sum_axis(Axis(0));
                gbeta[li] = d.sum_axis(Axis(0));
                let dxhat = &d * &bn.gamma;
                d = if *batch_mode {
                    let m = S::lit(d.nrows() as f64);
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dz = dxhat.mapv(|v| v * m) - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                    dz *= &inv_std.mapv(|s| s / m);
                    dz
                } else {
                    dxhat * inv_std
                };
            }
            gw[li] = standard(block.input.t().dot(&d));
            gb[li] = d.sum_axis(Axis(0));
            d = d.dot(&self.layers[li].weight.t());
        }
        Ok((MlpGrads { weight: gw, bias: gb, gamma: ggamma, beta: gbeta }, d))
    }

    /// Single-example convenience wrapper around [`Mlp::backward`] in evaluation mode.
    pub fn backward_vec(&self, input: ArrayView1<S>, output_grad: ArrayView1<S>) -> Result<(MlpGrads<S>, Array1<S>)> {
        let (_, cache) = self.forward_cached(input.insert_axis(Axis(0)), Pass::Eval)?;
        let (g, d) = self.backward(&cache, output_grad.insert_axis(Axis(0)))?;
        Ok((g, d.row(0).to_owned()))
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &MlpCache<S>) {
        let mom = S::lit(BatchNorm::<S>::MOMENTUM);
        for (bn, block) in self.norms.iter_mut().zip(&cache.blocks) {
            if let Some((mean, var)) = &block.batch_stats {
                let m = S::lit(block.input.nrows().max(2) as f64);
                let unbiased = var.mapv(|v| v * m / (m - S::one()));
                bn.running_mean = bn.running_mean.mapv(|v| v * (S::one() - mom)) + mean.mapv(|v| v * mom);
                bn.running_var = bn.running_var.mapv(|v| v * (S::one() - mom)) + unbiased.mapv(|v| v * mom);
            }
        }
    }

    pub fn zero_grads(&self) -> MlpGrads<S> {
        MlpGrads {
            weight: self.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            gamma: self.norms.iter().map(|b| Array1::zeros(b.gamma.len())).collect(),
            beta: self.norms.iter().map(|b| Array1::zeros(b.beta.len())).collect(),
        }
    }
}

fn standard<S: Scalar>(a: Array2<S>) -> Array2<S> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl<S: Scalar> ParamSet<S> for Mlp<S> {
    fn param_slices(&self) -> Vec<&[S]> {
        let mut v: Vec<&[S]> = Vec::new();
        for l in &self.layers {
            v.push(l.weight.as_slice().expect("standard layout"));
            v.push(l.bias.as_slice().expect("standard layout"));
        }
        for b in &self.norms {
            v.push(b.gamma.as_slice().expect("standard layout"));
            v.push(b.beta.as_slice().expect("standard layout"));
        }
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v: Vec<&mut [S]> = Vec::new();
        for l in &mut self.layers {
            v.push(l.weight.as_slice_mut().expect("standard layout"));
            v.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        for b in &mut self.norms {
            v.push(b.gamma.as_slice_mut().expect("standard layout"));
            v.push(b.beta.as_slice_mut().expect("standard layout"));
        }
        v
    }
}

impl<S: Scalar> ParamSet<S> for MlpGrads<S> {
    fn param_slices(&self) -> Vec<&[S]> {
        let mut v: Vec<&[S]> = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            v.push(w.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        for (g, b) in self.gamma.iter().zip(&self.beta) {
            v.push(g.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v: Vec<&mut [S]> = Vec::new();
        for (w, b) in self.weight.iter_mut().zip(self.bias.iter_mut()) {
            v.push(w.as_slice_mut().expect("standard layout"));
            v.push(b.as_slice_mut().expect("standard layout"));
        }
        for (g, b) in self.gamma.iter_mut().zip(self.beta.iter_mut()) {
            v.push(g.as_slice_mut().expect("standard layout"));
            v.push(b.as_slice_mut().expect("standard layout"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let layers = vec![Dense::<f64>::zeros(3, 4), Dense::zeros(4, 2)];
        let mlp = Mlp::from_layers(layers, Activation::Mish).unwrap();
        let out = mlp.forward_vec(array![1.0, -2.0, 0.5].view()).unwrap();
        assert_eq!(out, array![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let layer = Dense { weight: Array2::<f64>::eye(3), bias: Array1::zeros(3) };
        let mlp = Mlp::from_layers(vec![layer], Activation::Mish).unwrap();
        let v = array![0.3, -1.0, 2.5];
        assert_eq!(mlp.forward_vec(v.view()).unwrap(), v);
    }

    #[test]
    fn one_hidden_unit_mish_at_zero() {
        let l1 = Dense { weight: array![[1.0f64]], bias: array![0.0] };
        let l2 = Dense { weight: array![[1.0f64]], bias: array![0.0] };
        let mlp = Mlp::from_layers(vec![l1, l2], Activation::Mish).unwrap();
        assert_eq!(mlp.forward_vec(array![0.0].view()).unwrap(), array![0.0]);
    }

    #[test]
    fn shape_errors() {
        let mut rng = stream(1, &[0]);
        let mlp = Mlp::<f64>::new(&[3, 5, 2], Activation::Relu, &mut rng).unwrap();
        assert!(matches!(mlp.forward_vec(array![1.0, 2.0].view()), Err(Error::Shape(_))));
        assert!(matches!(mlp.backward_vec(array![1.0, 2.0, 3.0].view(), array![1.0].view()), Err(Error::Shape(_))));
        let bad = vec![Dense::<f64>::zeros(3, 4), Dense::zeros(5, 2)];
        assert!(Mlp::from_layers(bad, Activation::Mish).is_err());
    }

    #[test]
    fn affine_layer_gradient() {
        let layer = Dense { weight: array![[1.0f64, 2.0], [3.0, 4.0], [5.0, 6.0]], bias: array![0.1, 0.2] };
        let mlp = Mlp::from_layers(vec![layer], Activation::Mish).unwrap();
        let x = array![1.0, -1.0, 0.5];
        let g = array![2.0, -3.0];
        let (grads, dx) = mlp.backward_vec(x.view(), g.view()).unwrap();
        // dW[i, j] = x_i g_j in fan_in × fan_out layout
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(grads.weight[0][[i, j]], x[i] * g[j]);
            }
        }
        assert_eq!(grads.bias[0], g);
        assert_eq!(dx, array![1.0 * 2.0 - 2.0 * 3.0, 3.0 * 2.0 - 4.0 * 3.0, 5.0 * 2.0 - 6.0 * 3.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = stream(2, &[0]);
        let mlp = Mlp::<f64>::new(&[4, 8, 8, 3], Activation::Mish, &mut rng).unwrap();
        let (g, dx) = mlp.backward_vec(array![0.1, 0.2, -0.3, 0.4].view(), Array1::zeros(3).view()).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_is_train_only() {
        let mut rng = stream(3, &[0]);
        let mlp = Mlp::<f64>::new(&[4, 16, 2], Activation::Relu, &mut rng).unwrap().with_dropout(0.5);
        let x = array![[0.5, -0.2, 0.1, 1.0]];
        let a = mlp.forward(x.view()).unwrap();
        let b = mlp.forward(x.view()).unwrap();
        assert_eq!(a, b);
        let mut r = stream(4, &[0]);
        let (t, _) = mlp.forward_cached(x.view(), Pass::Train(&mut r)).unwrap();
        assert_ne!(a, t);
    }

    #[test]
    fn batch_norm_running_stats_track_batches() {
        let mut rng = stream(5, &[0]);
        let mut mlp = Mlp::<f64>::new(&[2, 3, 1], Activation::Relu, &mut rng).unwrap().with_batch_norm();
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.5], [2.0, 2.0]];
        for _ in 0..200 {
            let mut r = stream(6, &[0]);
            let (_, cache) = mlp.forward_cached(x.view(), Pass::Train(&mut r)).unwrap();
            mlp.update_running_stats(&cache);
        }
        let z = x.dot(&mlp.layers()[0].weight) + &mlp.layers()[0].bias;
        let mean = z.mean_axis(Axis(0)).unwrap();
        for (a, b) in mlp.norms()[0].running_mean.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = stream(7, &[0]);
        let mlp = Mlp::<f32>::new(&[3, 8, 2], Activation::Mish, &mut rng).unwrap();
        let out = mlp.forward_vec(array![0.1f32, 0.2, 0.3].view()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

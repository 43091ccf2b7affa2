//! Central finite-difference checks of [`Mlp::backward`].

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use super::{Activation, Mlp, ParamSet, Pass};
use crate::error::Result;
use crate::rng::{self, Rng};

/// Tolerances of a gradient check: an entry passes when its absolute error is
/// below `floor` or its error relative to the larger magnitude is below `rel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { step: 1e-5, rel: 1e-4, floor: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, analytic: f64, numeric: f64, tol: &Tolerance) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        self.checked += 1;
        if abs > tol.floor {
            self.worst_rel = self.worst_rel.max(rel);
            if rel > tol.rel {
                self.failures += 1;
            }
        }
    }
}

/// One random network, batch and upstream gradient.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub mlp: Mlp<f64>,
    pub input: Array2<f64>,
    pub output_grad: Array2<f64>,
    /// Use training-mode batch statistics.
    pub train: bool,
}

impl GradCase {
    /// Draws depth 1 to 4, widths 1 to 6, a smooth activation, and batch
    /// normalization (trained on batch statistics) for every other seed.
    pub fn random(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x6772_6164]);
        let depth = r.random_range(1..=4usize);
        let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=6usize)).collect();
        let activation = if r.random::<bool>() { Activation::Mish } else { Activation::Identity };
        let mut mlp = Mlp::new(&widths, activation, &mut r).expect("widths are positive");
        let norm = seed % 2 == 1 && depth > 1;
        if norm {
            mlp = mlp.with_batch_norm();
            let mut norms = mlp.norms().to_vec();
            for bn in &mut norms {
                bn.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
                bn.beta.mapv_inplace(|_| r.random_range(-0.5..0.5));
            }
            mlp.set_norms(norms).expect("one per hidden layer");
        }
        let rows = r.random_range(if norm { 3..=5usize } else { 1..=4 });
        let input = Array2::from_shape_fn((rows, widths[0]), |_| rng::normal::<f64>(&mut r));
        let output_grad = Array2::from_shape_fn((rows, widths[depth]), |_| rng::normal::<f64>(&mut r));
        Self { mlp, input, output_grad, train: norm }
    }

    fn loss(&self, mlp: &Mlp<f64>, input: ArrayView2<f64>) -> Result<f64> {
        let mut dummy = rng::stream(0, &[]);
        let pass = if self.train { Pass::Train(&mut dummy) } else { Pass::Eval };
        let (out, _) = mlp.forward_cached(input, pass)?;
        Ok((&out * &self.output_grad).sum())
    }

    /// Compares every parameter and input gradient with central differences
    /// of `⟨output, output_grad⟩`.
    pub fn check(&self, tol: &Tolerance) -> Result<GradReport> {
        let mut dummy: Rng = rng::stream(0, &[]);
        let pass = if self.train { Pass::Train(&mut dummy) } else { Pass::Eval };
        let (_, cache) = self.mlp.forward_cached(self.input.view(), pass)?;
        let (grads, dinput) = self.mlp.backward(&cache, self.output_grad.view())?;
        let analytic: Vec<f64> = grads.param_slices().concat();
        let mut report = GradReport::default();
        let mut probe = self.mlp.clone();
        let mut k = 0;
        for si in 0..probe.param_slices().len() {
            let len = probe.param_slices()[si].len();
            for j in 0..len {
                let orig = probe.param_slices()[si][j];
                probe.param_slices_mut()[si][j] = orig + tol.step;
                let up = self.loss(&probe, self.input.view())?;
                probe.param_slices_mut()[si][j] = orig - tol.step;
                let down = self.loss(&probe, self.input.view())?;
                probe.param_slices_mut()[si][j] = orig;
                report.record(analytic[k], (up - down) / (2.0 * tol.step), tol);
                k += 1;
            }
        }
        let mut x = self.input.clone();
        for ((i, j), &g) in dinput.indexed_iter() {
            let orig = x[[i, j]];
            x[[i, j]] = orig + tol.step;
            let up = self.loss(&self.mlp, x.view())?;
            x[[i, j]] = orig - tol.step;
            let down = self.loss(&self.mlp, x.view())?;
            x[[i, j]] = orig;
            report.record(g, (up - down) / (2.0 * tol.step), tol);
        }
        Ok(report)
    }
}

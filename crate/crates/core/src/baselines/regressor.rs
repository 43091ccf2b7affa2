use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::correction::{correct_free, correction_vjp, dc3_correct};
use crate::error::{Error, Result};
use crate::neural::{Activation, Adam, Mlp, Pass};
use crate::problems::{Candidate, Dataset, Instance, ProblemFamily};
use crate::rng::{self, domain};
use crate::trainer::{metrics_of, BatchCycler, EpochRecord, Phase, RunConfig, Splits};
use crate::Scalar;

/// Which loss trains the regression backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    /// Self-supervised soft loss with gradient correction.
    Dc3,
    /// Squared distance to the oracle label.
    Mlp,
}

/// Correction applied after completion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction<S> {
    pub train_steps: usize,
    pub test_steps: usize,
    pub lr: S,
}

/// A network mapping `x` to the free variables, followed by completion and,
/// for DC3, inequality correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor<S> {
    pub kind: RegressorKind,
    pub net: Mlp<S>,
    pub correction: Option<Correction<S>>,
    /// Penalty weight of the soft loss.
    pub lambda: S,
}

impl<S: Scalar> Regressor<S> {
    /// Two hidden ReLU layers with batch normalization and dropout.
    pub fn new(kind: RegressorKind, fam: &ProblemFamily<S>, cfg: &RunConfig) -> Result<Self> {
        let mut r = rng::stream(cfg.seed, &[domain::INIT]);
        let w = cfg.baseline_width;
        let net = Mlp::new(&[fam.n_eq(), w, w, fam.n_free()], Activation::Relu, &mut r)?
            .with_batch_norm()
            .with_dropout(cfg.dropout);
        let correction = match kind {
            RegressorKind::Dc3 => Some(Correction {
                train_steps: cfg.dc3_train_steps,
                test_steps: cfg.dc3_test_steps,
                lr: S::lit(cfg.dc3_correction_lr),
            }),
            RegressorKind::Mlp => None,
        };
        Ok(Self { kind, net, correction, lambda: S::lit(cfg.dc3_lambda) })
    }

    /// Evaluation-mode solutions for a batch of instances.
    pub fn predict(&self, fam: &ProblemFamily<S>, instances: &[Instance<S>]) -> Result<Vec<Candidate<S>>> {
        if instances.is_empty() {
            return Ok(Vec::new());
        }
        let xs = stack_x(fam, instances.iter());
        let zs = self.net.forward(xs.view())?;
        instances
            .iter()
            .zip(zs.axis_iter(Axis(0)))
            .map(|(inst, z)| {
                let mut y = fam.complete(z, inst.x.view())?;
                if let Some(c) = &self.correction {
                    y = dc3_correct(fam, inst.x.view(), y.view(), c.test_steps, c.lr)?;
                }
                Ok(fam.candidate_from_parts(fam.completion().project(y.view()), y))
            })
            .collect()
    }

    /// `f(y) + λ‖ReLU(Gy − h)‖² + λ‖Ay − x‖²` and its gradient in `y`.
    pub fn soft_loss(&self, fam: &ProblemFamily<S>, x: ArrayView1<S>, y: ArrayView1<S>) -> (S, Array1<S>) {
        let two = S::lit(2.0);
        let r = fam.violations(y);
        let e = fam.eq_residual(y, x);
        let loss = fam.objective(y)
            + self.lambda * r.iter().map(|&v| v * v).sum::<S>()
            + self.lambda * e.iter().map(|&v| v * v).sum::<S>();
        let mut grad = fam.objective_grad(y);
        grad = grad + fam.g().t().dot(&r).mapv(|v| v * two * self.lambda);
        if fam.n_eq() > 0 {
            grad = grad + fam.a().t().dot(&e).mapv(|v| v * two * self.lambda);
        }
        (loss, grad)
    }

    /// Loss of one row and its gradient with respect to the network output.
    fn row_loss(&self, fam: &ProblemFamily<S>, inst: &Instance<S>, z: ArrayView1<S>) -> Result<(S, Array1<S>)> {
        match self.kind {
            RegressorKind::Mlp => {
                let label = inst.label.as_ref().ok_or_else(|| Error::Config("supervised regression needs labels".into()))?;
                let y = fam.complete(z, inst.x.view())?;
                let d = &y - &label.y;
                let loss = d.iter().map(|&v| v * v).sum::<S>();
                Ok((loss, fam.completion().pullback(d.mapv(|v| v * S::lit(2.0)).view())))
            }
            RegressorKind::Dc3 => {
                let c = self.correction.expect("dc3 always corrects");
                let (_, y, trace) = correct_free(fam, inst.x.view(), z.to_owned(), c.train_steps, c.lr)?;
                let (loss, gy) = self.soft_loss(fam, inst.x.view(), y.view());
                let gz = fam.completion().pullback(gy.view());
                Ok((loss, correction_vjp(fam, &trace, gz)?))
            }
        }
    }

    /// One optimizer step on a batch; returns the mean loss.
    pub fn train_step(
        &mut self,
        fam: &ProblemFamily<S>,
        batch: &[&Instance<S>],
        opt: &mut Adam<S>,
        rng: &mut rng::Rng,
    ) -> Result<S> {
        let xs = stack_x(fam, batch.iter().copied());
        let (zs, cache) = self.net.forward_cached(xs.view(), Pass::Train(rng))?;
        let inv = S::one() / S::lit(batch.len() as f64);
        let mut d_out = Array2::zeros(zs.raw_dim());
        let mut total = S::zero();
        for (i, inst) in batch.iter().enumerate() {
            let (l, g) = self.row_loss(fam, inst, zs.row(i))?;
            total += l;
            d_out.row_mut(i).assign(&g.mapv(|v| v * inv));
        }
        let loss = total * inv;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite {} loss {loss}; largest network output {}",
                self.kind.name(),
                zs.iter().fold(S::zero(), |m, v| m.max(v.abs()))
            )));
        }
        let (grads, _) = self.net.backward(&cache, d_out.view())?;
        opt.step(&mut self.net, &grads)?;
        self.net.update_running_stats(&cache);
        Ok(loss)
    }
}

impl RegressorKind {
    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::Dc3 => "dc3",
            RegressorKind::Mlp => "mlp",
        }
    }
}

fn stack_x<'a, S: Scalar + 'a>(fam: &ProblemFamily<S>, it: impl Iterator<Item = &'a Instance<S>>) -> Array2<S> {
    let rows: Vec<&Instance<S>> = it.collect();
    let mut xs = Array2::zeros((rows.len(), fam.n_eq()));
    for (i, inst) in rows.iter().enumerate() {
        xs.row_mut(i).assign(&inst.x);
    }
    xs
}

/// Trains a regression baseline on the training slice of `data`.
pub fn train_regressor<S: Scalar>(
    kind: RegressorKind,
    data: &Dataset<S>,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Regressor<S>) -> Result<()>,
) -> Result<(Regressor<S>, Vec<EpochRecord>)> {
    cfg.validate()?;
    let splits = Splits::of(data.len(), cfg)?;
    if kind == RegressorKind::Mlp {
        if let Some(i) = splits.train.clone().find(|&i| data.instances[i].label.is_none()) {
            return Err(Error::Config(format!("training instance {i} has no label")));
        }
    }
    let fam = &data.family;
    let mut model = Regressor::new(kind, fam, cfg)?;
    let mut opt = Adam::new(&model.net, cfg.learning_rate);
    let mut batches = BatchCycler::new(splits.train.clone(), cfg.batch_size, cfg.seed);
    let val = &data.instances[splits.val.clone()];
    let phase = match kind {
        RegressorKind::Dc3 => Phase::SelfSupervised,
        RegressorKind::Mlp => Phase::Supervised,
    };
    let mut log = Vec::with_capacity(cfg.baseline_epochs);
    for epoch in 0..cfg.baseline_epochs {
        let batch: Vec<&Instance<S>> = batches.keys(epoch).into_iter().map(|k| &data.instances[k]).collect();
        let mut r = rng::stream(cfg.seed, &[domain::DROPOUT, epoch as u64]);
        opt.learning_rate = S::lit(cfg.learning_rate_at_of(epoch, cfg.baseline_epochs));
        let loss = model.train_step(fam, &batch, &mut opt, &mut r)?;
        let last = epoch + 1 == cfg.baseline_epochs;
        let metrics = if (epoch % cfg.log_interval == 0 || last) && !val.is_empty() {
            Some(metrics_of(fam, val, &model.predict(fam, val)?, cfg.violation_eps))
        } else {
            None
        };
        let rec = EpochRecord { epoch, phase, loss: loss.to_f64_lossy(), skipped: false, metrics };
        on_epoch(&rec, &model)?;
        log.push(rec);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{label_instance, OracleSettings};
    use crate::problems::ProblemKind;

    fn cfg() -> RunConfig {
        RunConfig {
            baseline_width: 32,
            baseline_epochs: 300,
            batch_size: 1,
            val_size: 0,
            test_size: 0,
            learning_rate: 3e-3,
            dropout: 0.0,
            ..RunConfig::qp_desk()
        }
    }

    #[test]
    fn mlp_overfits_a_single_instance() {
        let fam = ProblemFamily::<f64>::generate(ProblemKind::Qp, 6, 2, 6, 1).unwrap();
        let mut inst = fam.sample_instances(1);
        label_instance(&fam, &mut inst[0], &OracleSettings::default()).unwrap();
        let data = Dataset::new(fam, inst);
        let c = RunConfig { baseline_epochs: 1500, learning_rate: 1e-2, ..cfg() };
        let (m, log) = train_regressor(RegressorKind::Mlp, &data, &c, |_, _| Ok(())).unwrap();
        let pred = m.predict(&data.family, &data.instances).unwrap();
        let err: f64 = (&pred[0].y - &data.instances[0].label.as_ref().unwrap().y).iter().map(|v| v * v).sum();
        assert!(err < 1e-4, "mse {err}, last loss {}", log.last().unwrap().loss);
    }

    #[test]
    fn soft_loss_of_a_feasible_point_is_the_objective() {
        let fam = ProblemFamily::<f64>::generate(ProblemKind::Qp, 6, 2, 6, 1).unwrap();
        let inst = &fam.sample_instances(1)[0];
        let y = fam.anchor(inst.x.view());
        let m = Regressor::new(RegressorKind::Dc3, &fam, &cfg()).unwrap();
        let (l, _) = m.soft_loss(&fam, inst.x.view(), y.view());
        assert!((l - fam.objective(y.view())).abs() < 1e-9);
    }

    #[test]
    fn dc3_loss_trends_down() {
        let fam = ProblemFamily::<f64>::generate(ProblemKind::Qp, 10, 4, 10, 2).unwrap();
        let inst = fam.sample_instances(64);
        let data = Dataset::new(fam, inst);
        let c = RunConfig { batch_size: 16, baseline_epochs: 100, learning_rate: 1e-3, dropout: 0.2, ..cfg() };
        let (_, log) = train_regressor(RegressorKind::Dc3, &data, &c, |_, _| Ok(())).unwrap();
        let mean = |r: &[EpochRecord]| r.iter().map(|e| e.loss).sum::<f64>() / r.len() as f64;
        assert!(mean(&log[80..]) < mean(&log[..20]));
    }

    #[test]
    fn predictions_satisfy_equalities() {
        let fam = ProblemFamily::<f64>::generate(ProblemKind::Qp, 8, 3, 8, 5).unwrap();
        let inst = fam.sample_instances(8);
        for kind in [RegressorKind::Dc3, RegressorKind::Mlp] {
            let m = Regressor::new(kind, &fam, &cfg()).unwrap();
            for (c, i) in m.predict(&fam, &inst).unwrap().iter().zip(&inst) {
                let r = fam.eq_residual(c.y.view(), i.x.view());
                assert!(r.iter().all(|v| v.abs() <= 1e-8));
            }
        }
    }
}

//! Supervised warm-start followed by weighted bootstrapping on the model's own
//! samples, with a per-instance table of the best point seen so far.

mod config;
mod table;
mod weights;

use std::fmt;
use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub use config::{RunConfig, TrainTarget, PRESETS};
pub use table::LookupTable;
pub use weights::{modified_weights, quality_cmp, weight, WeightMode, WeightParams, MAX_EXPONENT};

use crate::diffusion::{sample_rows, NoiseGrads, NoiseModel, NoisePredictor, Schedule};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsRecord};
use crate::neural::Adam;
use crate::problems::{Candidate, Dataset, Instance, ProblemFamily};
use crate::rng::{self, domain};
use crate::Scalar;

/// Index ranges of the train, validation and test slices of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// The test slice is taken from the end, the validation slice just before it.
    pub fn new(len: usize, val_size: usize, test_size: usize) -> Result<Self> {
        let test = test_size.min(len);
        let val = val_size.min(len - test);
        let train = len - test - val;
        if train == 0 {
            return Err(Error::Config(format!("{len} instances leave nothing to train on after {val} validation and {test} test")));
        }
        Ok(Self { train: 0..train, val: train..train + val, test: train + val..len })
    }

    pub fn of(len: usize, cfg: &RunConfig) -> Result<Self> {
        Self::new(len, cfg.val_size, cfg.test_size)
    }
}

/// Cycles through reshuffled passes over a range of instance keys; a new
/// pass starts whenever the previous one is used up.
#[derive(Debug, Clone)]
pub struct BatchCycler {
    keys: Range<usize>,
    batch_size: usize,
    seed: u64,
    cache: Option<(usize, Vec<usize>)>,
}

impl BatchCycler {
    pub fn new(keys: Range<usize>, batch_size: usize, seed: u64) -> Self {
        Self { keys, batch_size, seed, cache: None }
    }

    pub fn keys(&mut self, epoch: usize) -> Vec<usize> {
        let n = self.keys.len();
        if n == 0 {
            return Vec::new();
        }
        (0..self.batch_size)
            .map(|b| {
                let global = epoch * self.batch_size + b;
                let pass = global / n;
                if self.cache.as_ref().map(|(p, _)| *p) != Some(pass) {
                    let mut perm: Vec<usize> = self.keys.clone().collect();
                    perm.shuffle(&mut rng::stream(self.seed, &[domain::SHUFFLE, pass as u64]));
                    self.cache = Some((pass, perm));
                }
                self.cache.as_ref().expect("just filled").1[global % n]
            })
            .collect()
    }
}

/// A fresh noise network sized for `fam`.
pub fn build_model<S: Scalar>(fam: &ProblemFamily<S>, cfg: &RunConfig) -> Result<NoiseModel<S>> {
    let schedule = Schedule::new(cfg.diffusion_steps, cfg.schedule)?;
    let mut r = rng::stream(cfg.seed, &[domain::INIT]);
    NoiseModel::new(fam.n_free(), fam.n_eq(), cfg.hidden_width, cfg.time_dim, schedule, &mut r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Supervised,
    SelfSupervised,
    Bootstrap(WeightMode),
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Supervised => "supervised",
            Phase::SelfSupervised => "self_supervised",
            Phase::Bootstrap(m) => m.name(),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the training log. Metrics are present on logging epochs only.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    /// Whether the epoch had no positive weight and took no step.
    pub skipped: bool,
    pub metrics: Option<MetricsRecord>,
}

/// One training row: a clean target, its weight and the noise draw.
struct Row<S> {
    z: Array1<S>,
    cond: Array1<S>,
    weight: S,
    t: usize,
    eps: Array1<S>,
}

fn noise_draw<S: Scalar>(seed: u64, epoch: usize, key: usize, j: usize, steps: usize, dim: usize) -> (usize, Array1<S>) {
    let mut r = rng::stream(seed, &[domain::TRAIN_NOISE, epoch as u64, key as u64, j as u64]);
    let t = r.random_range(1..=steps);
    (t, rng::normal_vec(&mut r, dim))
}

/// Weighted noise-prediction loss `Σ w ‖ε − ε̂(y_t, t, x)‖² / denom` and its gradients.
fn weighted_loss<S: Scalar>(model: &NoiseModel<S>, rows: &[Row<S>], denom: usize) -> Result<(S, NoiseGrads<S>)> {
    if rows.is_empty() {
        return Ok((S::zero(), model.zero_grads()));
    }
    let d = model.out_dim();
    let c = model.cond_dim();
    let mut y_t = Array2::zeros((rows.len(), d));
    let mut cond = Array2::zeros((rows.len(), c));
    let mut eps = Array2::zeros((rows.len(), d));
    let mut steps = Vec::with_capacity(rows.len());
    let sched = model.schedule();
    for (i, row) in rows.iter().enumerate() {
        let noisy = sched.q_sample(row.z.as_slice().expect("contiguous"), row.t, row.eps.as_slice().expect("contiguous"))?;
        y_t.row_mut(i).assign(&Array1::from(noisy));
        cond.row_mut(i).assign(&row.cond);
        eps.row_mut(i).assign(&row.eps);
        steps.push(row.t);
    }
    let (pred, cache) = model.forward_train(y_t.view(), &steps, cond.view())?;
    let inv = S::one() / S::lit(denom.max(1) as f64);
    let mut diff = pred - &eps;
    let mut loss = S::zero();
    for (mut r, row) in diff.axis_iter_mut(Axis(0)).zip(rows) {
        loss += row.weight * r.iter().map(|&v| v * v).sum::<S>();
        let k = S::lit(2.0) * row.weight * inv;
        r.mapv_inplace(|v| v * k);
    }
    let grads = model.backward(&cache, diff.view())?;
    Ok((loss * inv, grads))
}

/// Label-supervised loss on `(key, instance)` pairs; one noise draw per instance.
pub fn supervised_loss<S: Scalar>(
    model: &NoiseModel<S>,
    fam: &ProblemFamily<S>,
    batch: &[(usize, &Instance<S>)],
    seed: u64,
    epoch: usize,
) -> Result<(S, NoiseGrads<S>)> {
    let mut rows = Vec::with_capacity(batch.len());
    for &(key, inst) in batch {
        let label = inst.label.as_ref().ok_or_else(|| Error::Config(format!("instance {key} has no label")))?;
        let (t, eps) = noise_draw(seed, epoch, key, 0, model.schedule().steps(), model.out_dim());
        rows.push(Row { z: fam.completion().project(label.y.view()), cond: inst.x.clone(), weight: S::one(), t, eps });
    }
    weighted_loss(model, &rows, batch.len())
}

/// Outcome of one bootstrap step.
pub struct BootstrapOutcome<S> {
    pub loss: S,
    /// `None` when every modified weight was zero.
    pub grads: Option<NoiseGrads<S>>,
    /// Candidates of each instance, fresh samples first and the table entry last.
    pub candidates: Vec<Vec<Candidate<S>>>,
}

/// Settings of a bootstrap step.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapSettings<S> {
    pub samples: usize,
    pub eta: S,
    pub mode: WeightMode,
    pub target: TrainTarget,
    pub params: WeightParams<S>,
    /// Rescale each instance's training weights to sum to one.
    pub normalize: bool,
    pub seed: u64,
    pub epoch: usize,
}

/// Samples candidates for every instance, weights them together with the
/// table entry, builds the weighted loss and then offers the fresh samples
/// to the table.
pub fn bootstrap_step<S: Scalar>(
    model: &NoiseModel<S>,
    fam: &ProblemFamily<S>,
    batch: &[(usize, &Instance<S>)],
    table: &mut LookupTable<S>,
    st: &BootstrapSettings<S>,
) -> Result<BootstrapOutcome<S>> {
    let k = st.samples;
    if k == 0 {
        return Err(Error::Config("bootstrap needs at least one sample".into()));
    }
    let mut cond = Array2::zeros((batch.len() * k, fam.n_eq()));
    let mut ids = Vec::with_capacity(batch.len() * k);
    for (b, &(key, inst)) in batch.iter().enumerate() {
        for j in 0..k {
            cond.row_mut(b * k + j).assign(&inst.x);
            ids.push((key * k + j) as u64);
        }
    }
    let sample_seed = rng::mix(&[st.seed, domain::SAMPLE, st.epoch as u64]);
    let zs = sample_rows(model, cond.view(), st.eta, sample_seed, &ids)?;
    if zs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampling(format!("non-finite bootstrap sample at epoch {}", st.epoch)));
    }

    let mut rows = Vec::new();
    let mut all = Vec::with_capacity(batch.len());
    for (b, &(key, inst)) in batch.iter().enumerate() {
        let mut cands = Vec::with_capacity(k + 1);
        for j in 0..k {
            cands.push(fam.candidate(zs.row(b * k + j).to_owned(), inst.x.view())?);
        }
        let fresh = cands.len();
        if let Some(best) = table.get(key) {
            cands.push(best.clone());
        }
        let f_star = match (&inst.label, table.feasible_objective(key)) {
            (Some(l), _) => l.f,
            (None, Some(f)) => f,
            (None, None) => cands.iter().map(|c| c.objective).fold(S::infinity(), S::min),
        };
        let w: Vec<S> = cands.iter().map(|c| weight(c, f_star, st.mode, &st.params)).collect();
        let wm = modified_weights(&w);
        for (c, (&wi, &mi)) in cands.iter_mut().zip(w.iter().zip(&wm)) {
            c.weight = wi;
            c.modified_weight = mi;
        }
        let chosen: Vec<usize> = match st.target {
            TrainTarget::WeightedAll => (0..cands.len()).collect(),
            TrainTarget::Argmax => argmax(&w).into_iter().collect(),
        };
        let total: S = chosen.iter().map(|&j| cands[j].modified_weight).sum();
        let scale = if st.normalize && total > S::zero() { S::one() / total } else { S::one() };
        for j in chosen {
            let c = &cands[j];
            if c.modified_weight > S::zero() {
                let (t, eps) = noise_draw(st.seed, st.epoch, key, j, model.schedule().steps(), model.out_dim());
                rows.push(Row { z: c.z.clone(), cond: inst.x.clone(), weight: c.modified_weight * scale, t, eps });
            }
        }
        table.offer_all(key, &cands[..fresh]);
        all.push(cands);
    }

    if rows.is_empty() {
        return Ok(BootstrapOutcome { loss: S::zero(), grads: None, candidates: all });
    }
    let (loss, grads) = weighted_loss(model, &rows, batch.len())?;
    Ok(BootstrapOutcome { loss, grads: Some(grads), candidates: all })
}

fn argmax<S: Scalar>(w: &[S]) -> Option<usize> {
    (0..w.len()).reduce(|best, i| if w[i] > w[best] { i } else { best })
}

/// Samples `k` candidates for every instance and returns the selected one per
/// instance. Row streams are keyed by `(seed, instance position · k + j)`.
pub fn solve_instances<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    model: &P,
    fam: &ProblemFamily<S>,
    instances: &[Instance<S>],
    k: usize,
    eta: S,
    seed: u64,
    params: &WeightParams<S>,
) -> Result<Vec<Candidate<S>>> {
    if k == 0 {
        return Err(Error::Config("need at least one sample per instance".into()));
    }
    let mut out = Vec::with_capacity(instances.len());
    // bounded batches keep memory flat on large test sets
    let per_batch = (4096 / k).max(1);
    for (ci, chunk) in instances.chunks(per_batch).enumerate() {
        let base = ci * per_batch;
        let mut cond = Array2::zeros((chunk.len() * k, fam.n_eq()));
        let mut ids = Vec::with_capacity(chunk.len() * k);
        for (b, inst) in chunk.iter().enumerate() {
            for j in 0..k {
                cond.row_mut(b * k + j).assign(&inst.x);
                ids.push(((base + b) * k + j) as u64);
            }
        }
        let zs = sample_rows(model, cond.view(), eta, seed, &ids)?;
        for (b, inst) in chunk.iter().enumerate() {
            let cands = (0..k)
                .map(|j| fam.candidate(zs.row(b * k + j).to_owned(), inst.x.view()))
                .collect::<Result<Vec<_>>>()?;
            let f_star = match &inst.label {
                Some(l) => l.f,
                None => cands.iter().map(|c| c.objective).fold(S::infinity(), S::min),
            };
            let i = evaluation::select_index(&cands, f_star, params).expect("k ≥ 1");
            out.push(cands.into_iter().nth(i).expect("index in range"));
        }
    }
    Ok(out)
}

/// Metrics of one chosen candidate per instance.
pub fn metrics_of<S: Scalar>(fam: &ProblemFamily<S>, instances: &[Instance<S>], chosen: &[Candidate<S>], eps: f64) -> MetricsRecord {
    evaluation::metrics(
        fam,
        instances.iter().zip(chosen).map(|(inst, c)| (inst.x.view(), c.y.view(), inst.label.as_ref())),
        eps,
    )
}

/// Mean squared distance of `k` samples at `x` from `center`.
pub fn sample_spread<S: Scalar>(
    model: &NoiseModel<S>,
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    center: ArrayView1<S>,
    k: usize,
    eta: S,
    seed: u64,
) -> Result<f64> {
    let zs = crate::diffusion::sample_candidates(model, x, k, eta, seed)?;
    let ys = fam.complete_batch(zs.view(), x.insert_axis(Axis(0)).broadcast((k, x.len())).expect("broadcast"))?;
    let total: f64 = ys
        .axis_iter(Axis(0))
        .map(|y| y.iter().zip(center.iter()).map(|(&a, &b)| (a - b).to_f64_lossy().powi(2)).sum::<f64>())
        .sum();
    Ok(total / k as f64)
}

/// The training loop state: model, optimizer, table and position.
pub struct Trainer<'a, S> {
    pub model: NoiseModel<S>,
    optimizer: Adam<S>,
    pub table: LookupTable<S>,
    data: &'a Dataset<S>,
    cfg: RunConfig,
    splits: Splits,
    epoch: usize,
    batches: BatchCycler,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(data: &'a Dataset<S>, cfg: RunConfig) -> Result<Self> {
        let model = build_model(&data.family, &cfg)?;
        Self::with_model(data, cfg, model)
    }

    pub fn with_model(data: &'a Dataset<S>, cfg: RunConfig, model: NoiseModel<S>) -> Result<Self> {
        cfg.validate()?;
        let splits = Splits::of(data.len(), &cfg)?;
        let needs_labels = cfg.supervised_epochs() > 0 || cfg.seed_table_from_labels;
        if needs_labels {
            if let Some(i) = splits.train.clone().find(|&i| data.instances[i].label.is_none()) {
                return Err(Error::Config(format!("training instance {i} has no label but the run needs labels")));
            }
        }
        if model.out_dim() != data.family.n_free() || model.cond_dim() != data.family.n_eq() {
            return Err(Error::Config("model does not match the problem family".into()));
        }
        let optimizer = Adam::new(&model, cfg.learning_rate);
        let mut table = LookupTable::new(S::lit(cfg.violation_eps));
        if cfg.seed_table_from_labels {
            for i in splits.train.clone() {
                let label = data.instances[i].label.as_ref().expect("checked above");
                let z = data.family.completion().project(label.y.view());
                table.offer(i, &data.family.candidate_from_parts(z, label.y.clone()));
            }
        }
        let batches = BatchCycler::new(splits.train.clone(), cfg.batch_size, cfg.seed);
        Ok(Self { model, optimizer, table, data, cfg, splits, epoch: 0, batches })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn phase_of(&self, epoch: usize) -> Phase {
        if epoch < self.cfg.supervised_epochs() {
            Phase::Supervised
        } else if self.cfg.alternate {
            Phase::Bootstrap(WeightMode::for_epoch(epoch))
        } else {
            Phase::Bootstrap(WeightMode::Full)
        }
    }

    fn params(&self) -> WeightParams<S> {
        WeightParams { beta: S::lit(self.cfg.beta_w), eps: S::lit(self.cfg.violation_eps) }
    }

    /// Metrics on the validation slice with a fixed sampling seed.
    pub fn validate(&self) -> Result<Option<MetricsRecord>> {
        let val = &self.data.instances[self.splits.val.clone()];
        if val.is_empty() {
            return Ok(None);
        }
        let seed = rng::mix(&[self.cfg.seed, domain::VALIDATE]);
        let chosen = solve_instances(&self.model, &self.data.family, val, self.cfg.log_samples, S::lit(self.cfg.eta), seed, &self.params())?;
        Ok(Some(metrics_of(&self.data.family, val, &chosen, self.cfg.violation_eps)))
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let phase = self.phase_of(epoch);
        let keys = self.batches.keys(epoch);
        let fam = &self.data.family;
        let batch: Vec<(usize, &Instance<S>)> = keys.iter().map(|&k| (k, &self.data.instances[k])).collect();
        let (loss, grads) = match phase {
            Phase::Supervised | Phase::SelfSupervised => {
                let (l, g) = supervised_loss(&self.model, fam, &batch, self.cfg.seed, epoch)?;
                (l, Some(g))
            }
            Phase::Bootstrap(mode) => {
                let st = BootstrapSettings {
                    samples: self.cfg.train_samples,
                    eta: S::lit(self.cfg.eta),
                    mode,
                    target: self.cfg.target,
                    params: self.params(),
                    normalize: self.cfg.normalize_weights,
                    seed: self.cfg.seed,
                    epoch,
                };
                let out = bootstrap_step(&self.model, fam, &batch, &mut self.table, &st)?;
                (out.loss, out.grads)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss {loss} at epoch {epoch} ({phase})")));
        }
        let skipped = grads.is_none();
        self.optimizer.learning_rate = S::lit(self.cfg.learning_rate_at(epoch));
        if let Some(g) = grads {
            self.optimizer.step(&mut self.model, &g)?;
            if !self.model.all_finite() {
                return Err(Error::Training(format!("parameters became non-finite at epoch {epoch}")));
            }
        }
        self.epoch += 1;
        let last = self.epoch == self.cfg.epochs;
        let metrics = if epoch % self.cfg.log_interval == 0 || last { self.validate()? } else { None };
        Ok(EpochRecord { epoch, phase, loss: loss.to_f64_lossy(), skipped, metrics })
    }

    /// Runs the remaining epochs. `on_epoch` sees every record together with
    /// the model after that epoch's update.
    pub fn train_with(&mut self, mut on_epoch: impl FnMut(&EpochRecord, &NoiseModel<S>) -> Result<()>) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::with_capacity(self.cfg.epochs.saturating_sub(self.epoch));
        while !self.is_done() {
            let rec = self.run_epoch()?;
            on_epoch(&rec, &self.model)?;
            log.push(rec);
        }
        Ok(log)
    }

    pub fn train(&mut self) -> Result<Vec<EpochRecord>> {
        self.train_with(|_, _| Ok(()))
    }
}

/// Trains a fresh model on `data` and returns it with the epoch log.
pub fn train<S: Scalar>(data: &Dataset<S>, cfg: &RunConfig) -> Result<(NoiseModel<S>, Vec<EpochRecord>)> {
    let mut t = Trainer::new(data, cfg.clone())?;
    let log = t.train()?;
    Ok((t.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{label_instance, OracleSettings};
    use crate::neural::ParamSet;
    use crate::problems::ProblemKind;

    fn toy_data(count: usize) -> Dataset<f64> {
        let fam = ProblemFamily::toy2d(0);
        let mut inst = fam.sample_instances(count);
        for i in &mut inst {
            label_instance(&fam, i, &OracleSettings::default()).unwrap();
        }
        Dataset::new(fam, inst)
    }

    fn small_cfg() -> RunConfig {
        RunConfig {
            epochs: 10,
            hidden_width: 16,
            time_dim: 8,
            batch_size: 4,
            train_samples: 4,
            val_size: 2,
            test_size: 2,
            log_interval: 5,
            log_samples: 2,
            ..RunConfig::toy2d_fast()
        }
    }

    #[test]
    fn splits_take_test_from_the_end() {
        let s = Splits::new(10, 2, 3).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..5, 5..7, 7..10));
        assert!(Splits::new(4, 2, 2).is_err());
        let s = Splits::new(3, 5, 1).unwrap_err();
        assert!(matches!(s, Error::Config(_)));
    }

    #[test]
    fn batches_cover_every_key_once_per_pass() {
        let mut c = BatchCycler::new(3..10, 3, 1);
        let mut seen: Vec<usize> = (0..7).flat_map(|e| c.keys(e)).collect();
        assert_eq!(seen.len(), 21);
        for pass in seen.chunks_mut(7) {
            pass.sort();
            assert_eq!(pass, &[3, 4, 5, 6, 7, 8, 9]);
        }
    }

    #[test]
    fn phases_follow_the_schedule() {
        let data = toy_data(8);
        let t = Trainer::new(&data, small_cfg()).unwrap();
        let phases: Vec<&str> = (0..5).map(|e| t.phase_of(e).name()).collect();
        assert_eq!(phases, ["supervised", "supervised", "full", "violation", "full"]);
        let t = Trainer::new(&data, RunConfig { alternate: false, ..small_cfg() }).unwrap();
        assert_eq!(t.phase_of(3), Phase::Bootstrap(WeightMode::Full));
    }

    #[test]
    fn zero_network_loss_is_mean_noise_norm() {
        let data = toy_data(4);
        let mut model = build_model(&data.family, &small_cfg()).unwrap();
        for s in model.backbone.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch: Vec<(usize, &Instance<f64>)> = data.instances.iter().enumerate().collect();
        let (loss, _) = supervised_loss(&model, &data.family, &batch, 5, 0).unwrap();
        let expected: f64 = (0..4)
            .map(|k| noise_draw::<f64>(5, 0, k, 0, 5, 2).1.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 4.0;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn supervised_loss_requires_labels() {
        let fam = ProblemFamily::<f64>::toy2d(0);
        let inst = fam.sample_instances(1);
        let model = build_model(&fam, &small_cfg()).unwrap();
        let err = supervised_loss(&model, &fam, &[(0, &inst[0])], 0, 0).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
        let data = Dataset::new(fam, fam_instances_unlabeled(6));
        assert!(matches!(Trainer::new(&data, small_cfg()).err().unwrap(), Error::Config(_)));
    }

    fn fam_instances_unlabeled(n: usize) -> Vec<Instance<f64>> {
        ProblemFamily::<f64>::toy2d(0).sample_instances(n)
    }

    #[test]
    fn table_keeps_label_against_infeasible_samples() {
        let data = toy_data(1);
        let fam = &data.family;
        let model = build_model(fam, &small_cfg()).unwrap();
        let inst = &data.instances[0];
        let label = inst.label.as_ref().unwrap();
        let mut table = LookupTable::new(0.01);
        let best = fam.candidate_from_parts(fam.completion().project(label.y.view()), label.y.clone());
        table.offer(0, &best);
        let st = BootstrapSettings {
            samples: 8,
            eta: 1.0,
            mode: WeightMode::Full,
            target: TrainTarget::Argmax,
            params: WeightParams::default(),
            normalize: false,
            seed: 1,
            epoch: 0,
        };
        let out = bootstrap_step(&model, fam, &[(0, inst)], &mut table, &st).unwrap();
        let cands = &out.candidates[0];
        let feasible_fresh = cands[..8].iter().any(|c| c.is_feasible(0.01) && c.objective < label.f);
        if !feasible_fresh {
            assert_eq!(table.get(0).unwrap(), &best);
        }
        let w: Vec<f64> = cands.iter().map(|c| c.weight).collect();
        if cands[..8].iter().all(|c| !c.is_feasible(0.01)) {
            assert_eq!(argmax(&w), Some(8));
        }
    }

    #[test]
    fn weighted_all_matches_argmax_with_one_positive_weight() {
        let data = toy_data(1);
        let fam = &data.family;
        let model = build_model(fam, &small_cfg()).unwrap();
        let inst = &data.instances[0];
        // far-away infeasible table entries make only the sampled best positive
        let st = |target| BootstrapSettings {
            samples: 2,
            eta: 1.0,
            mode: WeightMode::ViolationOnly,
            target,
            params: WeightParams::default(),
            normalize: false,
            seed: 4,
            epoch: 3,
        };
        let mut t1 = LookupTable::new(0.01);
        let mut t2 = LookupTable::new(0.01);
        let a = bootstrap_step(&model, fam, &[(0, inst)], &mut t1, &st(TrainTarget::WeightedAll)).unwrap();
        let b = bootstrap_step(&model, fam, &[(0, inst)], &mut t2, &st(TrainTarget::Argmax)).unwrap();
        let positive = a.candidates[0].iter().filter(|c| c.modified_weight > 0.0).count();
        if positive == 1 {
            let (ga, gb) = (a.grads.unwrap(), b.grads.unwrap());
            for (x, y) in ga.param_slices().iter().zip(gb.param_slices()) {
                for (u, v) in x.iter().zip(y.iter()) {
                    assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
                }
            }
        } else {
            assert!(a.loss >= b.loss);
        }
    }

    #[test]
    fn all_zero_weights_skip_the_step_but_fill_the_table() {
        let fam = ProblemFamily::<f64>::toy2d(0);
        let inst = fam.sample_instances(1);
        let model = build_model(&fam, &small_cfg()).unwrap();
        let mut table = LookupTable::new(0.01);
        // violation-only weights are all zero when every sample is feasible;
        // a huge eps makes every sample count as feasible only in Full mode, so
        // use a single sample where ω̃ = ω and ω = 0 iff feasible
        let st = BootstrapSettings {
            samples: 1,
            eta: 0.0,
            mode: WeightMode::ViolationOnly,
            target: TrainTarget::WeightedAll,
            params: WeightParams::default(),
            normalize: false,
            seed: 0,
            epoch: 0,
        };
        let out = bootstrap_step(&model, &fam, &[(0, &inst[0])], &mut table, &st).unwrap();
        assert_eq!(table.len(), 1);
        let c = &out.candidates[0][0];
        assert_eq!(out.grads.is_none(), c.modified_weight == 0.0);
    }

    #[test]
    fn supervised_training_reduces_loss() {
        let fam = ProblemFamily::<f64>::generate(ProblemKind::Qp, 6, 2, 6, 2).unwrap();
        let mut inst = fam.sample_instances(10);
        for i in &mut inst {
            label_instance(&fam, i, &OracleSettings::default()).unwrap();
        }
        let data = Dataset::new(fam, inst);
        let cfg = RunConfig {
            kind: ProblemKind::Qp,
            epochs: 200,
            supervised_ratio: 1.0,
            batch_size: 10,
            hidden_width: 32,
            val_size: 0,
            test_size: 0,
            ..RunConfig::toy2d_fast()
        };
        let mut t = Trainer::new(&data, cfg).unwrap();
        let log = t.train().unwrap();
        let head: f64 = log[..20].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        let tail: f64 = log[180..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
        assert!(tail < head, "{head} -> {tail}");
        assert!(log.iter().all(|r| r.phase == Phase::Supervised));
    }

    #[test]
    fn training_is_reproducible() {
        let data = toy_data(8);
        let (m1, l1) = train(&data, &small_cfg()).unwrap();
        let (m2, l2) = train(&data, &small_cfg()).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1, m2);
        assert!(l1[0].metrics.is_some() && l1[1].metrics.is_none() && l1[9].metrics.is_some());
    }

    #[test]
    fn labels_give_gap_in_validation() {
        let data = toy_data(8);
        let t = Trainer::new(&data, small_cfg()).unwrap();
        let m = t.validate().unwrap().unwrap();
        assert!(m.gap.is_some());
    }
}

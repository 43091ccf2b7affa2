//! The experiment steps behind each subcommand, free of argument parsing
//! and file naming.

use std::fmt;
use std::ops::Range;

use anyhow::{bail, Result};
use diopt_core::baselines::{mbd_solve, train_regressor, MbdSettings, RegressorKind};
use diopt_core::checkpoint::{Checkpoint, Method, Model};
use diopt_core::evaluation::{metrics, theorem1_mc, MetricsRecord, TheoremEstimate};
use diopt_core::oracle::{label_instance, OracleSettings};
use diopt_core::problems::{Dataset, ProblemFamily, ProblemKind};
use diopt_core::rng::{self, domain};
use diopt_core::trainer::{metrics_of, solve_instances, EpochRecord, RunConfig, Splits, Trainer, WeightParams};
use rayon::prelude::*;

/// A fresh unlabeled dataset as described by the problem keys of `cfg`.
pub fn generate(cfg: &RunConfig) -> Result<Dataset<f64>> {
    let fam = ProblemFamily::generate(cfg.kind, cfg.n, cfg.n_eq, cfg.n_ineq, cfg.data_seed)?;
    let instances = fam.sample_instances(cfg.instances);
    Ok(Dataset::new(fam, instances))
}

pub fn family_summary(fam: &ProblemFamily<f64>) -> String {
    format!(
        "family {} n={} n_eq={} n_ineq={} seed={} convex={} digest={:016x}",
        fam.kind(),
        fam.n(),
        fam.n_eq(),
        fam.n_ineq(),
        fam.seed(),
        fam.is_convex(),
        fam.digest()
    )
}

/// Instances the oracle could not label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFailure {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for LabelFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "instance {}: {}", self.index, self.message)
    }
}

/// Labels every instance in parallel. Existing labels are recomputed, so
/// labeling twice gives the same file.
pub fn label(data: &mut Dataset<f64>, settings: &OracleSettings) -> Vec<LabelFailure> {
    let fam = &data.family;
    let mut failures: Vec<LabelFailure> = data
        .instances
        .par_iter_mut()
        .enumerate()
        .filter_map(|(index, inst)| {
            label_instance(fam, inst, settings).err().map(|e| {
                inst.label = None;
                LabelFailure { index, message: e.to_string() }
            })
        })
        .collect();
    failures.sort_by_key(|f| f.index);
    failures
}

/// Rejects a dataset whose family disagrees with the problem keys of `cfg`.
pub fn check_dataset(cfg: &RunConfig, data: &Dataset<f64>) -> Result<()> {
    let fam = &data.family;
    let same = if cfg.kind == ProblemKind::Toy2d {
        fam.kind() == ProblemKind::Toy2d
    } else {
        (fam.kind(), fam.n(), fam.n_eq(), fam.n_ineq()) == (cfg.kind, cfg.n, cfg.n_eq, cfg.n_ineq)
    };
    if !same {
        bail!(diopt_core::Error::Config(format!(
            "dataset holds {} {}/{}/{} but the config describes {} {}/{}/{}",
            fam.kind(),
            fam.n(),
            fam.n_eq(),
            fam.n_ineq(),
            cfg.kind,
            cfg.n,
            cfg.n_eq,
            cfg.n_ineq
        )));
    }
    Ok(())
}

/// The configuration a method actually trains with.
pub fn method_config(method: Method, cfg: &RunConfig) -> RunConfig {
    let mut cfg = cfg.clone();
    if method == Method::Diffusion {
        cfg.supervised_ratio = 1.0;
    }
    cfg
}

fn epochs_of(method: Method, cfg: &RunConfig) -> usize {
    if method.is_diffusion() {
        cfg.epochs
    } else {
        cfg.baseline_epochs
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint<f64>,
    pub log: Vec<EpochRecord>,
}

/// Trains `method` on `data`. `on_checkpoint` receives a checkpoint every
/// `checkpoint_interval` epochs, the final one excluded.
pub fn train(
    method: Method,
    data: &Dataset<f64>,
    cfg: &RunConfig,
    mut on_checkpoint: impl FnMut(&Checkpoint<f64>) -> Result<()>,
) -> Result<Trained> {
    let cfg = method_config(method, cfg);
    cfg.validate()?;
    check_dataset(&cfg, data)?;
    let fam = &data.family;
    let total = epochs_of(method, &cfg);
    let interval = cfg.checkpoint_interval;
    let due = |epoch: usize| interval > 0 && (epoch + 1) % interval == 0 && epoch + 1 < total;
    let mut hook_err = None;
    let (model, log) = if method.is_diffusion() {
        let mut t = Trainer::new(data, cfg.clone())?;
        let log = t.train_with(|rec, model| {
            if due(rec.epoch) {
                let ck = Checkpoint::new(method, cfg.clone(), fam, rec.epoch + 1, Model::Diffusion(model.clone()))?;
                if let Err(e) = on_checkpoint(&ck) {
                    hook_err = Some(e);
                    return Err(diopt_core::Error::Training("checkpoint callback failed".into()));
                }
            }
            Ok(())
        });
        let log = match (log, hook_err.take()) {
            (_, Some(e)) => return Err(e),
            (log, None) => log?,
        };
        (Model::Diffusion(t.model), log)
    } else {
        let kind = if method == Method::Dc3 { RegressorKind::Dc3 } else { RegressorKind::Mlp };
        let out = train_regressor(kind, data, &cfg, |rec, reg| {
            if due(rec.epoch) {
                let ck = Checkpoint::new(method, cfg.clone(), fam, rec.epoch + 1, Model::Regressor(reg.clone()))?;
                if let Err(e) = on_checkpoint(&ck) {
                    hook_err = Some(e);
                    return Err(diopt_core::Error::Training("checkpoint callback failed".into()));
                }
            }
            Ok(())
        });
        let (reg, log) = match (out, hook_err.take()) {
            (_, Some(e)) => return Err(e),
            (out, None) => out?,
        };
        (Model::Regressor(reg), log)
    };
    let checkpoint = Checkpoint::new(method, cfg, fam, total, model)?;
    Ok(Trained { checkpoint, log })
}

/// What produces solutions at evaluation time.
#[derive(Debug, Clone, Copy)]
pub enum Solver<'a> {
    Trained(&'a Checkpoint<f64>),
    /// Training-free model-based diffusion.
    Mbd(MbdSettings<f64>),
}

impl Solver<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Trained(ck) => ck.method.name(),
            Solver::Mbd(_) => "mbd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    /// Samples per instance for diffusion models.
    pub k: usize,
    pub eta: f64,
    pub seed: u64,
}

/// The test slice of `data` under `cfg`.
pub fn test_range(data: &Dataset<f64>, cfg: &RunConfig) -> Result<Range<usize>> {
    Ok(Splits::of(data.len(), cfg)?.test)
}

/// Solves `data.instances[range]` and returns their metrics. Diffusion
/// models sample `k` candidates and keep the selected one; regressors and
/// model-based diffusion produce one solution per instance.
pub fn evaluate(solver: Solver<'_>, data: &Dataset<f64>, cfg: &RunConfig, range: Range<usize>, st: &EvalSettings) -> Result<MetricsRecord> {
    let fam = &data.family;
    let instances = &data.instances[range];
    let seed = rng::mix(&[st.seed, domain::EVAL]);
    match solver {
        Solver::Trained(ck) => {
            ck.check_family(fam)?;
            match &ck.model {
                Model::Diffusion(m) => {
                    let params = WeightParams { beta: cfg.beta_w, eps: cfg.violation_eps };
                    let chosen = solve_instances(m, fam, instances, st.k, st.eta, seed, &params)?;
                    Ok(metrics_of(fam, instances, &chosen, cfg.violation_eps))
                }
                Model::Regressor(r) => Ok(metrics_of(fam, instances, &r.predict(fam, instances)?, cfg.violation_eps)),
            }
        }
        Solver::Mbd(settings) => {
            let ys = instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| mbd_solve(fam, inst.x.view(), &settings, seed, i as u64))
                .collect::<diopt_core::Result<Vec<_>>>()?;
            Ok(metrics(
                fam,
                instances.iter().zip(&ys).map(|(inst, y)| (inst.x.view(), y.view(), inst.label.as_ref())),
                cfg.violation_eps,
            ))
        }
    }
}

/// Theorem estimates for every dimension, computed in parallel.
pub fn verify_theorem1(dims: &[usize], planes: Option<usize>, points: usize, eps: f64, seed: u64) -> Result<Vec<TheoremEstimate>> {
    Ok(dims
        .par_iter()
        .map(|&d| theorem1_mc(d, planes.unwrap_or(d).max(d), points, eps, seed))
        .collect::<diopt_core::Result<Vec<_>>>()?)
}

/// A swept hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Diffusion steps.
    Steps,
    SupervisedRatio,
    /// Training samples per instance.
    TrainSamples,
    /// Evaluation samples per instance.
    EvalSamples,
    Eta,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Steps, Axis::SupervisedRatio, Axis::TrainSamples, Axis::EvalSamples, Axis::Eta];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Steps => "T",
            Axis::SupervisedRatio => "r_s",
            Axis::TrainSamples => "K_t",
            Axis::EvalSamples => "K",
            Axis::Eta => "eta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = if s == "η" { "eta" } else { s };
        Self::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }

    /// Evaluation-only axes share one trained model across values.
    pub fn retrains(self) -> bool {
        !matches!(self, Axis::EvalSamples | Axis::Eta)
    }

    fn config_key(self) -> &'static str {
        match self {
            Axis::Steps => "diffusion_steps",
            Axis::SupervisedRatio => "supervised_ratio",
            Axis::TrainSamples => "train_samples",
            Axis::EvalSamples => "eval_samples",
            Axis::Eta => "eta",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut out = cfg.clone();
        out.set(self.config_key(), value)?;
        out.validate()?;
        Ok(out)
    }
}

/// One value of a sweep: its configuration, training log (if it trained) and metrics.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: String,
    pub config: RunConfig,
    pub log: Vec<EpochRecord>,
    pub eval: EvalSettings,
    pub metrics: MetricsRecord,
}

/// Trains DiOpt for every value (once for evaluation-only axes) and
/// evaluates on the test slice. `seed` drives evaluation sampling.
pub fn ablate(axis: Axis, values: &[String], data: &Dataset<f64>, base: &RunConfig, seed: u64) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        bail!(diopt_core::Error::Config("an ablation needs at least one value".into()));
    }
    let configs = values.iter().map(|v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    let range = test_range(data, base)?;
    let shared = if axis.retrains() { None } else { Some(train(Method::Diopt, data, base, |_| Ok(()))?) };
    let mut out = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(configs) {
        let trained = match &shared {
            Some(t) => t.clone(),
            None => train(Method::Diopt, data, &cfg, |_| Ok(()))?,
        };
        let eval = EvalSettings { k: cfg.eval_samples, eta: cfg.eta, seed };
        let metrics = evaluate(Solver::Trained(&trained.checkpoint), data, &cfg, range.clone(), &eval)?;
        let log = if shared.is_some() { Vec::new() } else { trained.log };
        out.push(SweepPoint { value: value.clone(), config: cfg, log, eval, metrics });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::qp_desk();
        cfg.n = 4;
        cfg.n_eq = 1;
        cfg.n_ineq = 3;
        cfg.instances = 24;
        cfg.val_size = 4;
        cfg.test_size = 4;
        cfg.epochs = 6;
        cfg.baseline_epochs = 4;
        cfg.hidden_width = 8;
        cfg.baseline_width = 8;
        cfg.batch_size = 4;
        cfg.checkpoint_interval = 2;
        cfg
    }

    fn labeled(cfg: &RunConfig) -> Dataset<f64> {
        let mut d = generate(cfg).unwrap();
        assert!(label(&mut d, &OracleSettings::default()).is_empty());
        d
    }

    #[test]
    fn generation_matches_config_and_is_reproducible() {
        let cfg = tiny();
        let a = generate(&cfg).unwrap();
        assert_eq!((a.family.n(), a.family.n_eq(), a.len()), (4, 1, 24));
        assert_eq!(a.to_bytes().unwrap(), generate(&cfg).unwrap().to_bytes().unwrap());
        let toy = generate(&RunConfig::toy2d_fast()).unwrap();
        assert_eq!((toy.family.n(), toy.family.n_eq()), (2, 0));
        let mut none = cfg.clone();
        none.instances = 0;
        assert!(generate(&none).unwrap().is_empty());
    }

    #[test]
    fn relabeling_is_idempotent() {
        let cfg = tiny();
        let mut d = labeled(&cfg);
        let first = d.to_bytes().unwrap();
        assert!(label(&mut d, &OracleSettings::default()).is_empty());
        assert_eq!(d.to_bytes().unwrap(), first);
    }

    #[test]
    fn diffusion_method_has_no_bootstrap_epochs() {
        let cfg = tiny();
        let d = labeled(&cfg);
        let mut seen = Vec::new();
        let t = train(Method::Diffusion, &d, &cfg, |ck| {
            seen.push(ck.epoch);
            Ok(())
        })
        .unwrap();
        assert!(t.log.iter().all(|r| r.phase.name() == "supervised"));
        assert_eq!(seen, vec![2, 4]);
        assert_eq!(t.checkpoint.config.supervised_ratio, 1.0);
    }

    #[test]
    fn single_sample_evaluation_needs_no_selection() {
        let cfg = tiny();
        let d = labeled(&cfg);
        let t = train(Method::Diopt, &d, &cfg, |_| Ok(())).unwrap();
        let range = test_range(&d, &cfg).unwrap();
        let st = EvalSettings { k: 1, eta: 1.0, seed: 4 };
        let got = evaluate(Solver::Trained(&t.checkpoint), &d, &cfg, range.clone(), &st).unwrap();
        let Model::Diffusion(m) = &t.checkpoint.model else { unreachable!() };
        let cond = ndarray::Array2::from_shape_fn((range.len(), 1), |(i, _)| d.instances[range.start + i].x[0]);
        let ids: Vec<u64> = (0..range.len() as u64).collect();
        let z = diopt_core::diffusion::sample_rows(m, cond.view(), 1.0, rng::mix(&[4, domain::EVAL]), &ids).unwrap();
        let ys: Vec<_> = range.clone().zip(z.rows()).map(|(i, zr)| d.family.complete(zr, d.instances[i].x.view()).unwrap()).collect();
        let direct = metrics(
            &d.family,
            range.clone().zip(&ys).map(|(i, y)| (d.instances[i].x.view(), y.view(), d.instances[i].label.as_ref())),
            cfg.violation_eps,
        );
        assert_eq!(got, direct);
    }

    #[test]
    fn ablation_rejects_empty_values_and_counts_rows() {
        let cfg = tiny();
        let d = labeled(&cfg);
        assert!(ablate(Axis::EvalSamples, &[], &d, &cfg, 0).is_err());
        let pts = ablate(Axis::EvalSamples, &["1".into(), "3".into()], &d, &cfg, 0).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].eval.k, 3);
        assert_eq!(Axis::parse("η"), Some(Axis::Eta));
        assert_eq!(Axis::parse("k_t"), Some(Axis::TrainSamples));
    }

    #[test]
    fn mismatched_dataset_is_a_config_error() {
        let cfg = tiny();
        let d = labeled(&cfg);
        let mut other = cfg.clone();
        other.n = 5;
        let err = train(Method::Mlp, &d, &other, |_| Ok(())).unwrap_err();
        assert!(matches!(err.downcast_ref::<diopt_core::Error>(), Some(diopt_core::Error::Config(_))));
    }
}

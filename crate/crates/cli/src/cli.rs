use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use diopt_core::baselines::MbdSettings;
use diopt_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Method};
use diopt_core::oracle::OracleSettings;
use diopt_core::problems::{load_dataset, save_dataset, Dataset, ProblemKind};
use diopt_core::trainer::RunConfig;

use crate::ops::{self, Axis, EvalSettings, Solver};
use crate::report::{self, Manifest, ResultRow, SweepRow};

pub const OUT_DIR_VAR: &str = "DIOPT_OUT_DIR";
pub const THREADS_VAR: &str = "DIOPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "diopt", version, about = "Diffusion solver for parametric constrained optimization")]
pub struct Cli {
    /// Output directory [env: DIOPT_OUT_DIR, default: runs]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Named preset to start from
    #[arg(long)]
    pub preset: Option<String>,
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=100`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn is_empty(&self) -> bool {
        self.preset.is_none() && self.config.is_none() && self.overrides.is_empty()
    }

    /// The preset (default `qp-desk`), then the file, then the overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(self.preset.as_deref().unwrap_or("qp-desk"))?;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg = cfg.apply_text(&text)?;
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!(diopt_core::Error::Config(format!("override {kv:?} is not KEY=VALUE")));
            };
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMethod {
    Diopt,
    Diffusion,
    Dc3,
    Mlp,
}

impl From<TrainMethod> for Method {
    fn from(m: TrainMethod) -> Self {
        match m {
            TrainMethod::Diopt => Method::Diopt,
            TrainMethod::Diffusion => Method::Diffusion,
            TrainMethod::Dc3 => Method::Dc3,
            TrainMethod::Mlp => Method::Mlp,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a problem family and its parameter instances
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_eq: Option<usize>,
        #[arg(long)]
        n_ineq: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset file [default: <out>/dataset.bin]
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Attach oracle labels to every instance
    Label {
        dataset: PathBuf,
        /// Labeled file [default: overwrite the input]
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Iteration cap of the convex solver
        #[arg(long)]
        max_iter: Option<usize>,
        /// Random starts of the nonconvex solver
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Train a model and write its checkpoint and epoch log
    Train {
        #[arg(value_enum)]
        method: TrainMethod,
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint, or model-based diffusion, on the test slice
    Eval {
        dataset: PathBuf,
        #[arg(long, conflicts_with = "mbd", required_unless_present = "mbd")]
        checkpoint: Option<PathBuf>,
        /// Training-free model-based diffusion
        #[arg(long)]
        mbd: bool,
        #[command(flatten)]
        config: ConfigArgs,
        /// Samples per instance [default: eval_samples]
        #[arg(short)]
        k: Option<usize>,
        /// Sampling noise scale [default: eta]
        #[arg(long)]
        eta: Option<f64>,
        /// Evaluation seeds [default: the config seed]
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Sweep one hyperparameter: train and evaluate per value
    Ablate {
        /// One of T, r_s, K_t, K, eta
        axis: String,
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Evaluation seed [default: the config seed]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo check of the 2^-d feasible fraction near a vertex
    #[command(name = "verify-theorem1")]
    VerifyTheorem1 {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        points: usize,
        /// Total planes per configuration [default: d]
        #[arg(long)]
        planes: Option<usize>,
        /// Ball radius
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Output directory: the flag, then the environment, then `runs`.
pub fn out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Sizes the global thread pool from `DIOPT_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count"))?;
    // a pool that already exists (tests, repeated calls) is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(path: &Path) -> Result<Dataset<f64>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn config_line(cfg: &RunConfig) -> String {
    format!("{:016x}", cfg.hash())
}

/// Runs one parsed command, writing everything under the output directory.
pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let out = out_dir(cli.out.as_deref());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Generate { config, kind, n, n_eq, n_ineq, count, seed, output } => {
            let mut cfg = config.resolve()?;
            if let Some(k) = kind {
                cfg.kind = ProblemKind::parse(&k).ok_or_else(|| diopt_core::Error::Config(format!("unknown problem kind {k:?}")))?;
            }
            cfg.n = n.unwrap_or(cfg.n);
            cfg.n_eq = n_eq.unwrap_or(cfg.n_eq);
            cfg.n_ineq = n_ineq.unwrap_or(cfg.n_ineq);
            cfg.instances = count.unwrap_or(cfg.instances);
            cfg.data_seed = seed.unwrap_or(cfg.data_seed);
            let data = ops::generate(&cfg)?;
            let path = output.unwrap_or_else(|| out.join("dataset.bin"));
            save_dataset(&path, &data)?;
            println!("{}", ops::family_summary(&data.family));
            println!("{} instances -> {}", data.len(), path.display());
            let mut m = Manifest::new("generate");
            m.set("family", ops::family_summary(&data.family));
            m.set("instances", data.len());
            m.file(&path);
            m.write(&out.join("generate_manifest.txt"))
        }
        Command::Label { dataset, output, max_iter, starts } => {
            let mut data = load(&dataset)?;
            let mut settings = OracleSettings::default();
            if let Some(v) = max_iter {
                settings.qp.max_iter = v;
            }
            if let Some(v) = starts {
                settings.nonconvex.starts = v;
            }
            let failures = ops::label(&mut data, &settings);
            if !failures.is_empty() {
                for f in &failures {
                    eprintln!("{f}");
                }
                bail!("{} of {} instances could not be labeled", failures.len(), data.len());
            }
            let path = output.unwrap_or(dataset);
            save_dataset(&path, &data)?;
            println!("labeled {} instances -> {}", data.len(), path.display());
            let mut m = Manifest::new("label");
            m.set("family", ops::family_summary(&data.family));
            m.file(&path);
            m.write(&out.join("label_manifest.txt"))
        }
        Command::Train { method, dataset, config } => {
            let method = Method::from(method);
            let cfg = config.resolve()?;
            let data = load(&dataset)?;
            let files = train_files(&out, method, &data, &cfg)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Eval { dataset, checkpoint, mbd: _, config, k, eta, seeds } => {
            let data = load(&dataset)?;
            let ck: Option<Checkpoint<f64>> = match &checkpoint {
                Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
                None => None,
            };
            let cfg = match &ck {
                Some(ck) if config.is_empty() => ck.config.clone(),
                Some(ck) => {
                    let cfg = ops::method_config(ck.method, &config.resolve()?);
                    ck.check_config(&cfg)?;
                    cfg
                }
                None => config.resolve()?,
            };
            let solver = match &ck {
                Some(ck) => Solver::Trained(ck),
                None => Solver::Mbd(MbdSettings::from_config(&cfg)),
            };
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let path = eval_files(&out, solver, &data, &cfg, k.unwrap_or(cfg.eval_samples), eta.unwrap_or(cfg.eta), &seeds)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Ablate { axis, dataset, values, config, seed } => {
            let Some(axis) = Axis::parse(&axis) else {
                bail!(diopt_core::Error::Config(format!("unknown axis {axis:?} (T, r_s, K_t, K, eta)")));
            };
            let cfg = config.resolve()?;
            let data = load(&dataset)?;
            let path = ablate_files(&out, axis, &values, &data, &cfg, seed.unwrap_or(cfg.seed))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::VerifyTheorem1 { dims, points, planes, eps, seed } => {
            let rows = ops::verify_theorem1(&dims, planes, points, eps, seed)?;
            for e in &rows {
                println!("d={} estimate={:.5} expected={:.5} z={:.2}", e.d, e.estimate, e.expected(), e.z_score());
            }
            let path = out.join("theorem1.csv");
            report::write_theorem(&path, &rows)?;
            let mut m = Manifest::new("verify-theorem1");
            m.set("dims", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
            m.set("points", points);
            m.set("eps", eps);
            m.set("seed", seed);
            m.file(&path);
            m.write(&out.join("theorem1_manifest.txt"))
        }
    }
}

/// Trains and writes `<method>.ckpt`, `<method>_log.csv`, intermediate
/// `<method>_e<epoch>.ckpt` files and `<method>_manifest.txt`.
pub fn train_files(out: &Path, method: Method, data: &Dataset<f64>, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let trained = ops::train(method, data, cfg, |ck| {
        let p = out.join(format!("{method}_e{}.ckpt", ck.epoch));
        save_checkpoint(&p, ck)?;
        written.push(p);
        Ok(())
    })?;
    let ck_path = out.join(format!("{method}.ckpt"));
    save_checkpoint(&ck_path, &trained.checkpoint)?;
    let log_path = out.join(format!("{method}_log.csv"));
    report::write_epoch_log(&log_path, &trained.log)?;
    written.push(ck_path);
    written.push(log_path);
    let mut m = Manifest::new("train");
    m.set("method", method);
    m.set("config_hash", config_line(&trained.checkpoint.config));
    m.set("family", ops::family_summary(&data.family));
    for (k, v) in trained.checkpoint.config.entries() {
        m.set(&format!("config.{k}"), v);
    }
    for p in &written {
        m.file(p);
    }
    let mpath = out.join(format!("{method}_manifest.txt"));
    m.write(&mpath)?;
    written.push(mpath);
    Ok(written)
}

/// Evaluates at every seed and writes `results_<method>.csv` plus a manifest.
pub fn eval_files(out: &Path, solver: Solver<'_>, data: &Dataset<f64>, cfg: &RunConfig, k: usize, eta: f64, seeds: &[u64]) -> Result<PathBuf> {
    let range = ops::test_range(data, cfg)?;
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let st = EvalSettings { k, eta, seed };
        let metrics = ops::evaluate(solver, data, cfg, range.clone(), &st)?;
        rows.push(ResultRow { method: solver.name().into(), seed, k, eta, metrics });
    }
    let path = out.join(format!("results_{}.csv", solver.name()));
    report::write_results(&path, &rows)?;
    let mut m = Manifest::new("eval");
    m.set("method", solver.name());
    m.set("config_hash", config_line(cfg));
    m.set("family", ops::family_summary(&data.family));
    m.set("k", k);
    m.set("eta", eta);
    m.set("seeds", seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
    m.file(&path);
    m.write(&out.join(format!("eval_{}_manifest.txt", solver.name())))?;
    Ok(path)
}

/// Runs a sweep and writes `sweep_<axis>.csv`, one epoch log per retrained
/// value, and a manifest.
pub fn ablate_files(out: &Path, axis: Axis, values: &[String], data: &Dataset<f64>, cfg: &RunConfig, seed: u64) -> Result<PathBuf> {
    let points = ops::ablate(axis, values, data, cfg, seed)?;
    let mut m = Manifest::new("ablate");
    m.set("axis", axis.name());
    m.set("base_config_hash", config_line(cfg));
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        if !p.log.is_empty() {
            let log = out.join(format!("sweep_{}_{}_log.csv", axis.name(), p.value));
            report::write_epoch_log(&log, &p.log)?;
            m.file(log);
        }
        let result = ResultRow { method: Method::Diopt.name().into(), seed, k: p.eval.k, eta: p.eval.eta, metrics: p.metrics };
        rows.push(SweepRow { axis: axis.name().into(), value: p.value.clone(), result });
    }
    let path = out.join(format!("sweep_{}.csv", axis.name()));
    report::write_sweep(&path, &rows)?;
    m.file(&path);
    m.write(&out.join(format!("sweep_{}_manifest.txt", axis.name())))?;
    Ok(path)
}

/// Whether an error should be reported as bad usage rather than a failure.
pub fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| matches!(e.downcast_ref::<diopt_core::Error>(), Some(diopt_core::Error::Config(_))))
}

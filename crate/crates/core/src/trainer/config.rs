//! Run configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so a
//! file only needs the keys it changes. [`RunConfig::emit`] writes every key
//! in a fixed order; its hash identifies the configuration in artifact headers.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::codec::digest64;
use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::problems::ProblemKind;

/// Which candidates a bootstrap step trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    /// Every candidate, weighted by its modified weight.
    WeightedAll,
    /// Only the highest-weight candidate.
    Argmax,
}

impl TrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            TrainTarget::WeightedAll => "weighted_all",
            TrainTarget::Argmax => "argmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ProblemKind,
    pub n: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub instances: usize,
    pub data_seed: u64,

    pub epochs: usize,
    pub supervised_ratio: f64,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub eta: f64,
    pub beta_w: f64,
    pub violation_eps: f64,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one; 1 disables decay.
    pub lr_final_ratio: f64,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub time_dim: usize,
    pub target: TrainTarget,
    pub alternate: bool,
    pub normalize_weights: bool,
    pub seed_table_from_labels: bool,
    pub val_size: usize,
    pub test_size: usize,
    pub log_interval: usize,
    pub log_samples: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,

    pub baseline_width: usize,
    pub baseline_epochs: usize,
    pub dropout: f64,
    pub dc3_lambda: f64,
    pub dc3_train_steps: usize,
    pub dc3_test_steps: usize,
    pub dc3_correction_lr: f64,

    pub mbd_steps: usize,
    pub mbd_samples: usize,
    pub mbd_lambda: f64,
    pub mbd_temperature: f64,
    pub mbd_raw_weights: bool,
    pub mbd_completion: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::full()
    }
}

pub const PRESETS: [&str; 3] = ["full", "qp-desk", "toy2d-fast"];

impl RunConfig {
    pub fn full() -> Self {
        Self {
            kind: ProblemKind::Qp,
            n: 100,
            n_eq: 50,
            n_ineq: 100,
            instances: 10_000,
            data_seed: 0,
            epochs: 10_000,
            supervised_ratio: 0.2,
            diffusion_steps: 5,
            schedule: ScheduleKind::Vp,
            train_samples: 16,
            eval_samples: 32,
            eta: 1.0,
            beta_w: 1.0,
            violation_eps: 0.01,
            learning_rate: 1e-3,
            lr_final_ratio: 1.0,
            batch_size: 256,
            hidden_width: 512,
            time_dim: 32,
            target: TrainTarget::WeightedAll,
            alternate: true,
            normalize_weights: true,
            seed_table_from_labels: false,
            val_size: 256,
            test_size: 1000,
            log_interval: 10,
            log_samples: 8,
            checkpoint_interval: 1000,
            seed: 0,
            baseline_width: 512,
            baseline_epochs: 10_000,
            dropout: 0.2,
            dc3_lambda: 5.0,
            dc3_train_steps: 10,
            dc3_test_steps: 10,
            dc3_correction_lr: 1e-3,
            mbd_steps: 100,
            mbd_samples: 256,
            mbd_lambda: 10.0,
            mbd_temperature: 1.0,
            mbd_raw_weights: false,
            mbd_completion: true,
        }
    }

    pub fn qp_desk() -> Self {
        Self {
            n: 50,
            n_eq: 25,
            n_ineq: 50,
            instances: 1000,
            epochs: 2000,
            train_samples: 8,
            batch_size: 32,
            hidden_width: 128,
            val_size: 64,
            test_size: 100,
            log_interval: 1,
            log_samples: 4,
            checkpoint_interval: 0,
            baseline_width: 128,
            baseline_epochs: 2000,
            ..Self::full()
        }
    }

    pub fn toy2d_fast() -> Self {
        Self {
            kind: ProblemKind::Toy2d,
            n: 2,
            n_eq: 0,
            n_ineq: 3,
            instances: 512,
            epochs: 3000,
            batch_size: 8,
            hidden_width: 64,
            val_size: 16,
            test_size: 400,
            log_interval: 50,
            log_samples: 1,
            checkpoint_interval: 0,
            baseline_width: 64,
            baseline_epochs: 3000,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "qp-desk" => Ok(Self::qp_desk()),
            "toy2d-fast" => Ok(Self::toy2d_fast()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (known: {})", PRESETS.join(", ")))),
        }
    }

    /// Number of label-supervised epochs, `⌊r_s · N⌋`.
    pub fn supervised_epochs(&self) -> usize {
        (self.supervised_ratio * self.epochs as f64 + 1e-9).floor() as usize
    }

    /// Cosine decay from `learning_rate` to `learning_rate · lr_final_ratio`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate_at_of(epoch, self.epochs)
    }

    /// The same decay over a run of `total` epochs.
    pub fn learning_rate_at_of(&self, epoch: usize, total: usize) -> f64 {
        let frac = epoch as f64 / total.max(1) as f64;
        let r = self.lr_final_ratio;
        self.learning_rate * (r + (1.0 - r) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.supervised_ratio) {
            return bad(format!("supervised_ratio must lie in [0, 1], got {}", self.supervised_ratio));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("diffusion_steps", self.diffusion_steps),
            ("train_samples", self.train_samples),
            ("eval_samples", self.eval_samples),
            ("batch_size", self.batch_size),
            ("hidden_width", self.hidden_width),
            ("time_dim", self.time_dim),
            ("log_interval", self.log_interval),
            ("log_samples", self.log_samples),
            ("baseline_width", self.baseline_width),
            ("mbd_steps", self.mbd_steps),
            ("mbd_samples", self.mbd_samples),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.time_dim % 2 != 0 {
            return bad(format!("time_dim must be even, got {}", self.time_dim));
        }
        if !(self.violation_eps > 0.0) {
            return bad(format!("violation_eps must be positive, got {}", self.violation_eps));
        }
        for (name, v) in [("eta", self.eta), ("beta_w", self.beta_w), ("dc3_lambda", self.dc3_lambda), ("mbd_lambda", self.mbd_lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("mbd_temperature", self.mbd_temperature), ("dc3_correction_lr", self.dc3_correction_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lr_final_ratio > 0.0 && self.lr_final_ratio <= 1.0) {
            return bad(format!("lr_final_ratio must lie in (0, 1], got {}", self.lr_final_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.kind != ProblemKind::Toy2d && (self.n_eq >= self.n || self.n_ineq == 0) {
            return bad(format!("need n_eq < n and n_ineq ≥ 1, got n = {}, n_eq = {}, n_ineq = {}", self.n, self.n_eq, self.n_ineq));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = |v: bool| v.to_string();
        let f = |v: f64| format!("{v:?}");
        vec![
            ("kind", self.kind.name().to_string()),
            ("n", self.n.to_string()),
            ("n_eq", self.n_eq.to_string()),
            ("n_ineq", self.n_ineq.to_string()),
            ("instances", self.instances.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("supervised_ratio", f(self.supervised_ratio)),
            ("diffusion_steps", self.diffusion_steps.to_string()),
            ("schedule", self.schedule.name().to_string()),
            ("train_samples", self.train_samples.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eta", f(self.eta)),
            ("beta_w", f(self.beta_w)),
            ("violation_eps", f(self.violation_eps)),
            ("learning_rate", f(self.learning_rate)),
            ("lr_final_ratio", f(self.lr_final_ratio)),
            ("batch_size", self.batch_size.to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("time_dim", self.time_dim.to_string()),
            ("target", self.target.name().to_string()),
            ("alternate", b(self.alternate)),
            ("normalize_weights", b(self.normalize_weights)),
            ("seed_table_from_labels", b(self.seed_table_from_labels)),
            ("val_size", self.val_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("log_interval", self.log_interval.to_string()),
            ("log_samples", self.log_samples.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("seed", self.seed.to_string()),
            ("baseline_width", self.baseline_width.to_string()),
            ("baseline_epochs", self.baseline_epochs.to_string()),
            ("dropout", f(self.dropout)),
            ("dc3_lambda", f(self.dc3_lambda)),
            ("dc3_train_steps", self.dc3_train_steps.to_string()),
            ("dc3_test_steps", self.dc3_test_steps.to_string()),
            ("dc3_correction_lr", f(self.dc3_correction_lr)),
            ("mbd_steps", self.mbd_steps.to_string()),
            ("mbd_samples", self.mbd_samples.to_string()),
            ("mbd_lambda", f(self.mbd_lambda)),
            ("mbd_temperature", f(self.mbd_temperature)),
            ("mbd_raw_weights", b(self.mbd_raw_weights)),
            ("mbd_completion", b(self.mbd_completion)),
        ]
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        let v = value.trim();
        match key.trim() {
            "kind" => self.kind = ProblemKind::parse(v).ok_or_else(|| Error::Config(format!("kind: unknown {v:?}")))?,
            "n" => self.n = num(key, v)?,
            "n_eq" => self.n_eq = num(key, v)?,
            "n_ineq" => self.n_ineq = num(key, v)?,
            "instances" => self.instances = num(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "supervised_ratio" => self.supervised_ratio = num(key, v)?,
            "diffusion_steps" => self.diffusion_steps = num(key, v)?,
            "schedule" => {
                self.schedule = ScheduleKind::parse(v).ok_or_else(|| Error::Config(format!("schedule: unknown {v:?}")))?
            }
            "train_samples" => self.train_samples = num(key, v)?,
            "eval_samples" => self.eval_samples = num(key, v)?,
            "eta" => self.eta = num(key, v)?,
            "beta_w" => self.beta_w = num(key, v)?,
            "violation_eps" => self.violation_eps = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "lr_final_ratio" => self.lr_final_ratio = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "hidden_width" => self.hidden_width = num(key, v)?,
            "time_dim" => self.time_dim = num(key, v)?,
            "target" => {
                self.target = match v {
                    "weighted_all" => TrainTarget::WeightedAll,
                    "argmax" => TrainTarget::Argmax,
                    _ => return Err(Error::Config(format!("target: unknown {v:?}"))),
                }
            }
            "alternate" => self.alternate = num(key, v)?,
            "normalize_weights" => self.normalize_weights = num(key, v)?,
            "seed_table_from_labels" => self.seed_table_from_labels = num(key, v)?,
            "val_size" => self.val_size = num(key, v)?,
            "test_size" => self.test_size = num(key, v)?,
            "log_interval" => self.log_interval = num(key, v)?,
            "log_samples" => self.log_samples = num(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "baseline_width" => self.baseline_width = num(key, v)?,
            "baseline_epochs" => self.baseline_epochs = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "dc3_lambda" => self.dc3_lambda = num(key, v)?,
            "dc3_train_steps" => self.dc3_train_steps = num(key, v)?,
            "dc3_test_steps" => self.dc3_test_steps = num(key, v)?,
            "dc3_correction_lr" => self.dc3_correction_lr = num(key, v)?,
            "mbd_steps" => self.mbd_steps = num(key, v)?,
            "mbd_samples" => self.mbd_samples = num(key, v)?,
            "mbd_lambda" => self.mbd_lambda = num(key, v)?,
            "mbd_temperature" => self.mbd_temperature = num(key, v)?,
            "mbd_raw_weights" => self.mbd_raw_weights = num(key, v)?,
            "mbd_completion" => self.mbd_completion = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. A `preset = name` line,
    /// if present, must come first and resets every key to that preset.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            if k.trim() == "preset" {
                self = Self::preset(v.trim())?;
                continue;
            }
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::full().apply_text(text)
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }

    pub fn hash(&self) -> u64 {
        digest64(self.emit().as_bytes())
    }
}

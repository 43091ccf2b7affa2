//! Trained-model files.
//!
//! All integers and floats are little-endian; floats are stored as `f64`
//! whatever the in-memory scalar.
//!
//! ```text
//! magic        8 bytes  "DIOPTCK\0"
//! version      u32
//! method       u32      0 diopt, 1 diffusion, 2 dc3, 3 mlp
//! config hash  u64      hash of the embedded config text
//! family       u64      digest of the problem family trained on
//! epoch        u64      epochs completed
//! config       u64 length + UTF-8 `key = value` text
//! payload      method-specific, see below
//! ```
//!
//! Diffusion payload: schedule kind (u32), step count (u64), β₁..β_T, output
//! and condition widths (u64 each), then the time head and the backbone as
//! networks.
//!
//! Regression payload: λ (f64), a correction flag (u32) followed by train
//! steps, test steps (u64) and step size (f64) when set, then the network.
//!
//! Network: activation tag (u32), dropout (f64), layer count (u64), per
//! layer `fan_in, fan_out` (u64) with weights row-major and bias; then a
//! batch-norm flag (u32) and, when set, γ, β, running mean and running
//! variance for every hidden layer.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::baselines::{Correction, Regressor, RegressorKind};
use crate::codec::{Reader, Writer};
use crate::diffusion::{NoiseModel, NoisePredictor, Schedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::neural::{Activation, BatchNorm, Dense, Mlp, TimeEmbedding};
use crate::problems::ProblemFamily;
use crate::trainer::RunConfig;
use crate::Scalar;

const MAGIC: &[u8; 8] = b"DIOPTCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training method a checkpoint came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Diopt,
    /// Supervised-only diffusion, i.e. DiOpt with every epoch supervised.
    Diffusion,
    Dc3,
    Mlp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Diopt, Method::Diffusion, Method::Dc3, Method::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Diopt => "diopt",
            Method::Diffusion => "diffusion",
            Method::Dc3 => "dc3",
            Method::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn tag(self) -> u32 {
        match self {
            Method::Diopt => 0,
            Method::Diffusion => 1,
            Method::Dc3 => 2,
            Method::Mlp => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn is_diffusion(self) -> bool {
        matches!(self, Method::Diopt | Method::Diffusion)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model<S> {
    Diffusion(NoiseModel<S>),
    Regressor(Regressor<S>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub method: Method,
    pub config: RunConfig,
    pub family_digest: u64,
    pub epoch: usize,
    pub model: Model<S>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(method: Method, config: RunConfig, family: &ProblemFamily<S>, epoch: usize, model: Model<S>) -> Result<Self> {
        let consistent = match (&model, method) {
            (Model::Diffusion(_), m) => m.is_diffusion(),
            (Model::Regressor(r), Method::Dc3) => r.kind == RegressorKind::Dc3,
            (Model::Regressor(r), Method::Mlp) => r.kind == RegressorKind::Mlp,
            _ => false,
        };
        if !consistent {
            return Err(Error::Config(format!("model does not belong to method {method}")));
        }
        Ok(Self { method, config, family_digest: family.digest(), epoch, model })
    }

    pub fn config_hash(&self) -> u64 {
        self.config.hash()
    }

    /// Fails unless `cfg` is the configuration this checkpoint was trained with.
    pub fn check_config(&self, cfg: &RunConfig) -> Result<()> {
        let (want, got) = (self.config_hash(), cfg.hash());
        if want != got {
            return Err(Error::Config(format!("config hash {got:016x} does not match checkpoint hash {want:016x}")));
        }
        Ok(())
    }

    pub fn check_family(&self, fam: &ProblemFamily<S>) -> Result<()> {
        if fam.digest() != self.family_digest {
            return Err(Error::Config(format!(
                "dataset family {:016x} does not match checkpoint family {:016x}",
                fam.digest(),
                self.family_digest
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(self.method.tag());
        w.u64(self.config_hash());
        w.u64(self.family_digest);
        w.u64(self.epoch as u64);
        w.str(&self.config.emit());
        match &self.model {
            Model::Diffusion(m) => write_noise_model(&mut w, m),
            Model::Regressor(r) => write_regressor(&mut w, r),
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let tag = r.u32("method")?;
        let Some(method) = Method::from_tag(tag) else {
            return r.fail(format!("unknown method tag {tag}"));
        };
        let hash = r.u64("config hash")?;
        let family_digest = r.u64("family digest")?;
        let epoch = r.u64("epoch")? as usize;
        let text = r.str("config")?;
        let config = RunConfig::parse(&text)?;
        if config.hash() != hash {
            return r.fail(format!("stored config hash {hash:016x} does not match its config text"));
        }
        let model = if method.is_diffusion() {
            Model::Diffusion(read_noise_model(&mut r)?)
        } else {
            let kind = if method == Method::Dc3 { RegressorKind::Dc3 } else { RegressorKind::Mlp };
            Model::Regressor(read_regressor(&mut r, kind)?)
        };
        r.expect_end()?;
        Ok(Self { method, config, family_digest, epoch, model })
    }
}

pub fn save_checkpoint<S: Scalar>(path: impl AsRef<Path>, ck: &Checkpoint<S>) -> Result<()> {
    std::fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

fn write_array<'a, S: Scalar + 'a>(w: &mut Writer, xs: impl IntoIterator<Item = &'a S>) {
    w.f64s(xs.into_iter().map(|v| v.to_f64_lossy()));
}

fn read_vec<S: Scalar>(r: &mut Reader<'_>, n: usize, what: &str) -> Result<Array1<S>> {
    Ok(r.f64s(n, what)?.into_iter().map(S::lit).collect())
}

fn write_mlp<S: Scalar>(w: &mut Writer, m: &Mlp<S>) {
    w.u32(m.activation().tag() as u32);
    w.f64(m.dropout());
    w.u64(m.layers().len() as u64);
    for l in m.layers() {
        w.u64(l.fan_in() as u64);
        w.u64(l.fan_out() as u64);
        write_array(w, l.weight.iter());
        write_array(w, l.bias.iter());
    }
    w.u32(m.has_batch_norm() as u32);
    for bn in m.norms() {
        for a in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            write_array(w, a.iter());
        }
    }
}

fn read_mlp<S: Scalar>(r: &mut Reader<'_>) -> Result<Mlp<S>> {
    let tag = r.u32("activation")?;
    let Some(activation) = u8::try_from(tag).ok().and_then(Activation::from_tag) else {
        return r.fail(format!("unknown activation tag {tag}"));
    };
    let dropout = r.f64("dropout")?;
    if !(0.0..1.0).contains(&dropout) {
        return r.fail(format!("dropout {dropout} outside [0, 1)"));
    }
    let count = r.len("layer count", 16)?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let fan_in = r.len("fan in", 0)?;
        let fan_out = r.len("fan out", 0)?;
        let Some(cells) = fan_in.checked_mul(fan_out) else {
            return r.fail("layer size overflows");
        };
        let weight = Array2::from_shape_vec((fan_in, fan_out), r.f64s(cells, "weights")?.into_iter().map(S::lit).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let bias = read_vec(r, fan_out, "bias")?;
        layers.push(Dense { weight, bias });
    }
    let mut mlp = Mlp::from_layers(layers, activation)?.with_dropout(dropout);
    match r.u32("batch-norm flag")? {
        0 => {}
        1 => {
            let widths: Vec<usize> = mlp.layers()[..count - 1].iter().map(|l| l.fan_out()).collect();
            let mut norms = Vec::with_capacity(widths.len());
            for width in widths {
                norms.push(BatchNorm {
                    gamma: read_vec(r, width, "gamma")?,
                    beta: read_vec(r, width, "beta")?,
                    running_mean: read_vec(r, width, "running mean")?,
                    running_var: read_vec(r, width, "running variance")?,
                });
            }
            mlp.set_norms(norms)?;
        }
        other => return r.fail(format!("bad batch-norm flag {other}")),
    }
    Ok(mlp)
}

fn write_noise_model<S: Scalar>(w: &mut Writer, m: &NoiseModel<S>) {
    let sched = &m.schedule;
    w.u32(sched.kind().tag());
    w.u64(sched.steps() as u64);
    w.f64s((1..=sched.steps()).map(|t| sched.beta(t).to_f64_lossy()));
    w.u64(m.out_dim() as u64);
    w.u64(m.cond_dim() as u64);
    write_mlp(w, m.time.head());
    write_mlp(w, &m.backbone);
}

fn read_noise_model<S: Scalar>(r: &mut Reader<'_>) -> Result<NoiseModel<S>> {
    let tag = r.u32("schedule kind")?;
    let Some(kind) = ScheduleKind::from_tag(tag) else {
        return r.fail(format!("unknown schedule tag {tag}"));
    };
    let steps = r.len("schedule steps", 8)?;
    let betas = r.f64s(steps, "betas")?.into_iter().map(S::lit).collect();
    let schedule = Schedule::from_betas(kind, betas)?;
    let out_dim = r.len("output width", 0)?;
    let cond_dim = r.len("condition width", 0)?;
    let time = TimeEmbedding::from_head(read_mlp(r)?)?;
    let backbone = read_mlp(r)?;
    NoiseModel::from_parts(time, backbone, schedule, cond_dim, out_dim)
}

fn write_regressor<S: Scalar>(w: &mut Writer, reg: &Regressor<S>) {
    w.f64(reg.lambda.to_f64_lossy());
    match &reg.correction {
        Some(c) => {
            w.u32(1);
            w.u64(c.train_steps as u64);
            w.u64(c.test_steps as u64);
            w.f64(c.lr.to_f64_lossy());
        }
        None => w.u32(0),
    }
    write_mlp(w, &reg.net);
}

fn read_regressor<S: Scalar>(r: &mut Reader<'_>, kind: RegressorKind) -> Result<Regressor<S>> {
    let lambda = S::lit(r.f64("lambda")?);
    let correction = match r.u32("correction flag")? {
        0 => None,
        1 => Some(Correction {
            train_steps: r.u64("train steps")? as usize,
            test_steps: r.u64("test steps")? as usize,
            lr: S::lit(r.f64("correction step")?),
        }),
        other => return r.fail(format!("bad correction flag {other}")),
    };
    let net = read_mlp(r)?;
    Ok(Regressor { kind, net, correction, lambda })
}

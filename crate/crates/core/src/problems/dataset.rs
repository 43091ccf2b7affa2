//! Dataset files.
//!
//! Layout (all integers and floats little-endian, floats IEEE-754 binary64):
//!
//! ```text
//! magic      8 bytes  "DIOPTDS\0"
//! version    u32      currently 1
//! kind       u32      0 toy2d, 1 qp, 2 qpsr, 3 cqp
//! n, n_eq, n_ineq, seed           u64 each
//! alpha      f64
//! digest     u64      family digest, checked on load
//! basic      n_eq × u64           completion basic columns
//! count      u64      number of instances
//! flags      u32      bit 0: labels present
//! q_diag (n), p (n), A (n_eq·n, row-major), G (n_ineq·n), h (n_ineq)
//! X (count·n_eq)
//! Y (count·n), F (count)          only with labels
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{FamilyParts, Instance, Label, ProblemFamily, ProblemKind};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::Scalar;

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DIOPTDS\0";
const FLAG_LABELS: u32 = 1;
const MAX_EMPTY_INSTANCES: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub family: ProblemFamily<S>,
    pub instances: Vec<Instance<S>>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(family: ProblemFamily<S>, instances: Vec<Instance<S>>) -> Self {
        Self { family, instances }
    }

    pub fn is_labeled(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|i| i.label.is_some())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fam = &self.family;
        let labeled = self.instances.iter().filter(|i| i.label.is_some()).count();
        if labeled != 0 && labeled != self.instances.len() {
            return Err(Error::Config(format!("{labeled} of {} instances labeled; labels must be all or none", self.len())));
        }
        let lit = |v: &S| v.to_f64_lossy();
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(fam.kind().tag());
        for d in [fam.n(), fam.n_eq(), fam.n_ineq()] {
            w.u64(d as u64);
        }
        w.u64(fam.seed());
        w.f64(fam.alpha().to_f64_lossy());
        w.u64(fam.digest());
        for &b in fam.completion().basic() {
            w.u64(b as u64);
        }
        w.u64(self.instances.len() as u64);
        w.u32(if labeled > 0 { FLAG_LABELS } else { 0 });
        w.f64s(fam.q_diag().iter().map(lit));
        w.f64s(fam.p().iter().map(lit));
        w.f64s(fam.a().iter().map(lit));
        w.f64s(fam.g().iter().map(lit));
        w.f64s(fam.h().iter().map(lit));
        for inst in &self.instances {
            if inst.x.len() != fam.n_eq() {
                return Err(Error::Shape(format!("instance x of width {} for n_eq = {}", inst.x.len(), fam.n_eq())));
            }
            w.f64s(inst.x.iter().map(lit));
        }
        if labeled > 0 {
            for inst in &self.instances {
                let y = &inst.label.as_ref().expect("checked above").y;
                if y.len() != fam.n() {
                    return Err(Error::Shape(format!("label of width {} for n = {}", y.len(), fam.n())));
                }
                w.f64s(y.iter().map(lit));
            }
            for inst in &self.instances {
                w.f64(inst.label.as_ref().expect("checked above").f.to_f64_lossy());
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: DATASET_VERSION });
        }
        let at = r.offset();
        let kind = ProblemKind::from_tag(r.u32("kind")?)
            .ok_or_else(|| Error::Parse { offset: at, message: "unknown problem kind".into() })?;
        let n = r.len("n", 8)?;
        let n_eq = r.len("n_eq", 8)?;
        let n_ineq = r.len("n_ineq", 8)?;
        let seed = r.u64("seed")?;
        let alpha = r.f64("alpha")?;
        let digest = r.u64("digest")?;
        let basic = (0..n_eq).map(|_| r.u64("basic column").map(|b| b as usize)).collect::<Result<Vec<_>>>()?;
        let count = r.len("instance count", 8 * n_eq)?;
        if n_eq == 0 && count > MAX_EMPTY_INSTANCES {
            return r.fail(format!("implausible instance count {count}"));
        }
        let flags = r.u32("flags")?;
        if flags & !FLAG_LABELS != 0 {
            return r.fail(format!("unknown flags {flags:#x}"));
        }
        let vec = |r: &mut Reader, len: usize, what: &str| -> Result<Array1<S>> {
            Ok(r.f64s(len, what)?.into_iter().map(S::lit).collect())
        };
        let mat = |r: &mut Reader, rows: usize, cols: usize, what: &str| -> Result<Array2<S>> {
            let at = r.offset();
            let data: Vec<S> = r.f64s(rows * cols, what)?.into_iter().map(S::lit).collect();
            Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse { offset: at, message: e.to_string() })
        };
        let q_diag = vec(&mut r, n, "Q diagonal")?;
        let p = vec(&mut r, n, "p")?;
        let a = mat(&mut r, n_eq, n, "A")?;
        let g = mat(&mut r, n_ineq, n, "G")?;
        let h = vec(&mut r, n_ineq, "h")?;
        let xs = mat(&mut r, count, n_eq, "X")?;
        let labels = if flags & FLAG_LABELS != 0 {
            let ys = mat(&mut r, count, n, "Y")?;
            let fs = vec(&mut r, count, "F")?;
            Some((ys, fs))
        } else {
            None
        };
        r.expect_end()?;

        let at = r.offset();
        let parts = FamilyParts { kind, seed, q_diag, p, a, g, h, alpha: S::lit(alpha), basic: Some(basic) };
        let family = ProblemFamily::from_parts(parts)
            .map_err(|e| Error::Parse { offset: at, message: format!("invalid family: {e}") })?;
        if family.digest() != digest {
            return Err(Error::Parse { offset: at, message: "family digest mismatch".into() });
        }
        let instances = (0..count)
            .map(|i| Instance {
                x: xs.row(i).to_owned(),
                label: labels.as_ref().map(|(ys, fs)| Label { y: ys.row(i).to_owned(), f: fs[i] }),
            })
            .collect();
        Ok(Self { family, instances })
    }
}

pub fn save_dataset<S: Scalar>(path: impl AsRef<Path>, data: &Dataset<S>) -> Result<()> {
    fs::write(path, data.to_bytes()?)?;
    Ok(())
}

pub fn load_dataset<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    Dataset::from_bytes(&fs::read(path)?)
}

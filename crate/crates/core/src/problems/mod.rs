//! Parametric benchmark families
//! `min f(y) s.t. A y = x, G y ≤ h`, with `x` varying per instance.

mod completion;
mod dataset;

use std::fmt;

use ndarray::{array, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub use completion::Completion;
pub use dataset::{load_dataset, save_dataset, Dataset, DATASET_VERSION};

use crate::codec::{digest64, Writer};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, domain};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// Fixed two-variable QP with three inequalities and no equalities.
    Toy2d,
    /// Convex QP, `Q, p ∈ [0,1]`.
    Qp,
    /// QP with sine regularizer `½yᵀQy + α pᵀ sin(y)`.
    Qpsr,
    /// Concave QP, `Q, p ∈ [−1,0]`.
    Cqp,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [ProblemKind::Toy2d, ProblemKind::Qp, ProblemKind::Qpsr, ProblemKind::Cqp];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Toy2d => "toy2d",
            ProblemKind::Qp => "qp",
            ProblemKind::Qpsr => "qpsr",
            ProblemKind::Cqp => "cqp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s.to_ascii_lowercase())
    }

    pub fn tag(self) -> u32 {
        match self {
            ProblemKind::Toy2d => 0,
            ProblemKind::Qp => 1,
            ProblemKind::Qpsr => 2,
            ProblemKind::Cqp => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Interval the diagonal of `Q` and the entries of `p` are drawn from.
    fn coefficient_range(self) -> (f64, f64) {
        match self {
            ProblemKind::Cqp => (-1.0, 0.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fixed data of one benchmark family.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFamily<S> {
    kind: ProblemKind,
    seed: u64,
    q_diag: Array1<S>,
    p: Array1<S>,
    a: Array2<S>,
    g: Array2<S>,
    h: Array1<S>,
    alpha: S,
    a_pinv: Array2<S>,
    completion: Completion<S>,
}

/// Raw arrays of a family, as generated or read from disk.
#[derive(Debug, Clone)]
pub struct FamilyParts<S> {
    pub kind: ProblemKind,
    pub seed: u64,
    pub q_diag: Array1<S>,
    pub p: Array1<S>,
    pub a: Array2<S>,
    pub g: Array2<S>,
    pub h: Array1<S>,
    pub alpha: S,
    /// Basic columns for completion; chosen by pivoting when absent.
    pub basic: Option<Vec<usize>>,
}

const MAX_ATTEMPTS: u64 = 100;

impl<S: Scalar> ProblemFamily<S> {
    /// Draws a family. `Q`-diagonal and `p` are uniform on the kind's interval,
    /// `A` and `G` standard normal, and `h_i = Σ_j |(G A⁺)_ij|`.
    pub fn generate(kind: ProblemKind, n: usize, n_eq: usize, n_ineq: usize, seed: u64) -> Result<Self> {
        if kind == ProblemKind::Toy2d {
            return Ok(Self::toy2d(seed));
        }
        if n_eq >= n {
            return Err(Error::Generation(format!("need n_eq < n, got n_eq = {n_eq}, n = {n}")));
        }
        if n_ineq == 0 {
            return Err(Error::Generation("need at least one inequality".into()));
        }
        let (lo, hi) = kind.coefficient_range();
        let mut last_err = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut r = rng::stream(seed, &[domain::FAMILY, attempt]);
            let q_diag = Array1::from_shape_fn(n, |_| rng::uniform(&mut r, lo, hi));
            let p = Array1::from_shape_fn(n, |_| rng::uniform(&mut r, lo, hi));
            let a: Array2<S> = Array2::from_shape_fn((n_eq, n), |_| rng::normal(&mut r));
            let g: Array2<S> = Array2::from_shape_fn((n_ineq, n), |_| rng::normal(&mut r));
            let a_pinv = match linalg::pinv_full_row_rank(a.view()) {
                Ok(p) => p,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let h = g.dot(&a_pinv).mapv(|v| v.abs()).sum_axis(Axis(1));
            let parts = FamilyParts { kind, seed, q_diag, p, a, g, h, alpha: S::one(), basic: None };
            match Self::from_parts(parts) {
                Ok(f) => return Ok(f),
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Generation(format!(
            "no full-rank equality matrix after {MAX_ATTEMPTS} attempts (last: {})",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    /// `min ½‖y‖² − 2(y₁ + y₂)` over `y₁ ≤ 1, y₂ ≤ 1, −y₁ − y₂ ≤ 1`.
    /// The optimum is the vertex `(1, 1)` with objective −3.
    pub fn toy2d(seed: u64) -> Self {
        let lit = |v: f64| S::lit(v);
        let parts = FamilyParts {
            kind: ProblemKind::Toy2d,
            seed,
            q_diag: array![lit(1.0), lit(1.0)],
            p: array![lit(-2.0), lit(-2.0)],
            a: Array2::zeros((0, 2)),
            g: array![[lit(1.0), lit(0.0)], [lit(0.0), lit(1.0)], [lit(-1.0), lit(-1.0)]],
            h: array![lit(1.0), lit(1.0), lit(1.0)],
            alpha: S::one(),
            basic: None,
        };
        Self::from_parts(parts).expect("toy family is well formed")
    }

    pub fn from_parts(parts: FamilyParts<S>) -> Result<Self> {
        let FamilyParts { kind, seed, q_diag, p, a, g, h, alpha, basic } = parts;
        let n = q_diag.len();
        if p.len() != n || a.ncols() != n || g.ncols() != n || g.nrows() != h.len() {
            return Err(Error::Shape(format!(
                "inconsistent family arrays: q {}, p {}, A {:?}, G {:?}, h {}",
                n,
                p.len(),
                a.dim(),
                g.dim(),
                h.len()
            )));
        }
        if a.nrows() >= n {
            return Err(Error::Shape(format!("{} equalities leave no free variables among {n}", a.nrows())));
        }
        let a_pinv = linalg::pinv_full_row_rank(a.view())
            .map_err(|e| Error::Generation(format!("equality matrix is not full row rank: {e}")))?;
        let completion = match basic {
            Some(b) => Completion::with_basis(a.view(), b)?,
            None => Completion::new(a.view())?,
        };
        Ok(Self { kind, seed, q_diag, p, a, g, h, alpha, a_pinv, completion })
    }

    /// Same family with the sine-regularizer scale replaced.
    pub fn with_alpha(mut self, alpha: S) -> Self {
        self.alpha = alpha;
        self
    }

    /// Same family with the linear coefficients replaced.
    pub fn with_linear(mut self, p: Array1<S>) -> Result<Self> {
        if p.len() != self.n() {
            return Err(Error::Shape(format!("linear term of width {} for n = {}", p.len(), self.n())));
        }
        self.p = p;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: ProblemKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.q_diag.len()
    }

    pub fn n_eq(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_free(&self) -> usize {
        self.completion.n_free()
    }

    pub fn q_diag(&self) -> ArrayView1<'_, S> {
        self.q_diag.view()
    }

    pub fn p(&self) -> ArrayView1<'_, S> {
        self.p.view()
    }

    pub fn a(&self) -> ArrayView2<'_, S> {
        self.a.view()
    }

    pub fn g(&self) -> ArrayView2<'_, S> {
        self.g.view()
    }

    pub fn h(&self) -> ArrayView1<'_, S> {
        self.h.view()
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn a_pinv(&self) -> ArrayView2<'_, S> {
        self.a_pinv.view()
    }

    pub fn completion(&self) -> &Completion<S> {
        &self.completion
    }

    /// True when the objective is convex (nonnegative diagonal, no sine term).
    pub fn is_convex(&self) -> bool {
        let sine = self.kind == ProblemKind::Qpsr && self.alpha != S::zero();
        !sine && self.q_diag.iter().all(|&q| q >= S::zero())
    }

    fn sine_term(&self) -> bool {
        self.kind == ProblemKind::Qpsr
    }

    pub fn objective(&self, y: ArrayView1<S>) -> S {
        let half = S::lit(0.5);
        let mut f = S::zero();
        if self.sine_term() {
            for ((&q, &p), &v) in self.q_diag.iter().zip(&self.p).zip(y) {
                f += half * q * v * v + self.alpha * p * v.sin();
            }
        } else {
            for ((&q, &p), &v) in self.q_diag.iter().zip(&self.p).zip(y) {
                f += half * q * v * v + p * v;
            }
        }
        f
    }

    pub fn objective_grad(&self, y: ArrayView1<S>) -> Array1<S> {
        if self.sine_term() {
            Zip::from(&self.q_diag).and(&self.p).and(y).map_collect(|&q, &p, &v| q * v + self.alpha * p * v.cos())
        } else {
            Zip::from(&self.q_diag).and(&self.p).and(y).map_collect(|&q, &p, &v| q * v + p)
        }
    }

    pub fn objectives(&self, y: ArrayView2<S>) -> Array1<S> {
        y.axis_iter(Axis(0)).map(|row| self.objective(row)).collect()
    }

    /// `G y − h`, the signed inequality values.
    pub fn ineq_values(&self, y: ArrayView1<S>) -> Array1<S> {
        self.g.dot(&y) - &self.h
    }

    /// Elementwise `max(G y − h, 0)`.
    pub fn violations(&self, y: ArrayView1<S>) -> Array1<S> {
        self.ineq_values(y).mapv(|v| v.max(S::zero()))
    }

    pub fn violations_batch(&self, y: ArrayView2<S>) -> Array2<S> {
        let mut v = y.dot(&self.g.t());
        v -= &self.h;
        v.mapv_inplace(|e| e.max(S::zero()));
        v
    }

    /// `A y − x`.
    pub fn eq_residual(&self, y: ArrayView1<S>, x: ArrayView1<S>) -> Array1<S> {
        self.a.dot(&y) - &x
    }

    /// The feasible anchor `A⁺ x`.
    pub fn anchor(&self, x: ArrayView1<S>) -> Array1<S> {
        self.a_pinv.dot(&x)
    }

    pub fn complete(&self, z: ArrayView1<S>, x: ArrayView1<S>) -> Result<Array1<S>> {
        self.completion.complete(z, x)
    }

    pub fn complete_batch(&self, z: ArrayView2<S>, x: ArrayView2<S>) -> Result<Array2<S>> {
        self.completion.complete_batch(z, x)
    }

    /// Evaluates a free-variable vector into a full [`Candidate`].
    pub fn candidate(&self, z: Array1<S>, x: ArrayView1<S>) -> Result<Candidate<S>> {
        let y = self.complete(z.view(), x)?;
        Ok(self.candidate_from_parts(z, y))
    }

    pub(crate) fn candidate_from_parts(&self, z: Array1<S>, y: Array1<S>) -> Candidate<S> {
        let objective = self.objective(y.view());
        let violations = self.violations(y.view());
        Candidate { z, y, objective, violations, weight: S::zero(), modified_weight: S::zero() }
    }

    /// Draws `count` instances with `x` uniform on `[−1, 1]^{n_eq}`.
    pub fn sample_instances(&self, count: usize) -> Vec<Instance<S>> {
        (0..count as u64)
            .map(|i| {
                let mut r = rng::stream(self.seed, &[domain::INSTANCES, i]);
                let x = Array1::from_shape_fn(self.n_eq(), |_| rng::uniform(&mut r, -1.0, 1.0));
                Instance { x, label: None }
            })
            .collect()
    }

    /// Hash of every array that defines the family.
    pub fn digest(&self) -> u64 {
        let mut w = Writer::new();
        w.u32(self.kind.tag());
        for d in [self.n(), self.n_eq(), self.n_ineq()] {
            w.u64(d as u64);
        }
        w.u64(self.seed);
        w.f64(self.alpha.to_f64_lossy());
        for arr in [&self.q_diag, &self.p, &self.h] {
            w.f64s(arr.iter().map(|v| v.to_f64_lossy()));
        }
        for m in [&self.a, &self.g] {
            w.f64s(m.iter().map(|v| v.to_f64_lossy()));
        }
        for &b in self.completion.basic() {
            w.u64(b as u64);
        }
        digest64(&w.finish())
    }
}

/// Oracle solution of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Label<S> {
    pub y: Array1<S>,
    pub f: S,
}

/// One parameter vector `x` with an optional oracle label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<S> {
    pub x: Array1<S>,
    pub label: Option<Label<S>>,
}

impl<S: Scalar> Instance<S> {
    pub fn new(x: Array1<S>) -> Self {
        Self { x, label: None }
    }

    /// Checks the label against equality and inequality residual bounds.
    pub fn check_label(&self, fam: &ProblemFamily<S>, tol: S) -> Result<()> {
        let Some(label) = &self.label else {
            return Err(Error::Config("instance has no label".into()));
        };
        let eq = linalg::norm_inf(fam.eq_residual(label.y.view(), self.x.view()).view());
        let ineq = linalg::norm_inf(fam.violations(label.y.view()).view());
        let f = fam.objective(label.y.view());
        if eq > tol || ineq > tol {
            return Err(Error::Oracle(format!("label residuals: equality {eq}, inequality {ineq}")));
        }
        if (f - label.f).abs() > tol * (S::one() + f.abs()) {
            return Err(Error::Oracle(format!("label objective {} differs from f(y*) = {f}", label.f)));
        }
        Ok(())
    }
}

/// A decision vector with its cached objective, violations and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<S> {
    pub z: Array1<S>,
    pub y: Array1<S>,
    pub objective: S,
    pub violations: Array1<S>,
    pub weight: S,
    pub modified_weight: S,
}

impl<S: Scalar> Candidate<S> {
    pub fn total_violation(&self) -> S {
        self.violations.iter().copied().sum()
    }

    pub fn max_violation(&self) -> S {
        linalg::norm_inf(self.violations.view())
    }

    pub fn is_feasible(&self, eps: S) -> bool {
        self.violations.iter().all(|&v| v <= eps)
    }
}

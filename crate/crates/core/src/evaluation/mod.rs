//! Solution selection, quality metrics and the half-space Monte-Carlo check.

mod theorem;

use std::cmp::Ordering;

use ndarray::ArrayView1;

pub use theorem::{theorem1_mc, TheoremEstimate};

use crate::problems::{Candidate, Label, ProblemFamily};
use crate::trainer::{weight, WeightMode, WeightParams};
use crate::Scalar;

/// Index of the candidate with the largest full-mode weight; ties go to the
/// lower objective, then to the lower index.
pub fn select_index<S: Scalar>(cands: &[Candidate<S>], f_star: S, params: &WeightParams<S>) -> Option<usize> {
    let w: Vec<S> = cands.iter().map(|c| weight(c, f_star, WeightMode::Full, params)).collect();
    (0..cands.len()).reduce(|best, i| {
        let by_weight = w[i].partial_cmp(&w[best]).unwrap_or(Ordering::Equal);
        let better = match by_weight {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => cands[i].objective < cands[best].objective,
        };
        if better {
            i
        } else {
            best
        }
    })
}

pub fn select_solution<'a, S: Scalar>(cands: &'a [Candidate<S>], f_star: S, params: &WeightParams<S>) -> Option<&'a Candidate<S>> {
    select_index(cands, f_star, params).map(|i| &cands[i])
}

/// Quality of one returned solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceMetrics {
    pub objective: f64,
    /// Relative gap in percent, or the absolute difference when `|f*|` is tiny.
    pub gap: Option<f64>,
    pub gap_absolute: bool,
    pub ineq_mean: f64,
    pub ineq_max: f64,
    pub ineq_num_viol: usize,
    pub eq_mean: f64,
    pub eq_max: f64,
}

impl InstanceMetrics {
    pub fn feasible(&self) -> bool {
        self.ineq_num_viol == 0
    }
}

/// Gap below which `|f*|` counts as zero.
pub const GAP_FLOOR: f64 = 1e-12;

pub fn instance_metrics<S: Scalar>(
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    y: ArrayView1<S>,
    label: Option<&Label<S>>,
    eps: f64,
) -> InstanceMetrics {
    let f = fam.objective(y).to_f64_lossy();
    let g = fam.ineq_values(y);
    let n_ineq = g.len().max(1) as f64;
    let viol: Vec<f64> = g.iter().map(|v| v.to_f64_lossy().max(0.0)).collect();
    let eq: Vec<f64> = fam.eq_residual(y, x).iter().map(|v| v.to_f64_lossy().abs()).collect();
    let (gap, gap_absolute) = match label {
        Some(l) => {
            let fs = l.f.to_f64_lossy();
            if fs.abs() < GAP_FLOOR {
                (Some(f - fs), true)
            } else {
                (Some((f - fs) / fs.abs() * 100.0), false)
            }
        }
        None => (None, false),
    };
    InstanceMetrics {
        objective: f,
        gap,
        gap_absolute,
        ineq_mean: viol.iter().sum::<f64>() / n_ineq,
        ineq_max: viol.iter().copied().fold(0.0, f64::max),
        ineq_num_viol: g.iter().filter(|v| v.to_f64_lossy() > eps).count(),
        eq_mean: if eq.is_empty() { 0.0 } else { eq.iter().sum::<f64>() / eq.len() as f64 },
        eq_max: eq.iter().copied().fold(0.0, f64::max),
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = xs.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Metrics averaged over instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub instances: usize,
    pub objective: Stat,
    pub gap: Option<Stat>,
    pub gap_absolute: bool,
    pub ineq_mean: Stat,
    pub ineq_max: Stat,
    pub ineq_num_viol: Stat,
    /// Percentage of instances with no violated inequality.
    pub feasibility: f64,
    pub eq_mean: Stat,
    pub eq_max: Stat,
}

impl MetricsRecord {
    pub fn from_instances(ms: &[InstanceMetrics]) -> Self {
        let gap = if !ms.is_empty() && ms.iter().all(|m| m.gap.is_some()) {
            Some(Stat::of(ms.iter().map(|m| m.gap.unwrap())))
        } else {
            None
        };
        let feasible = ms.iter().filter(|m| m.feasible()).count();
        Self {
            instances: ms.len(),
            objective: Stat::of(ms.iter().map(|m| m.objective)),
            gap,
            gap_absolute: ms.iter().any(|m| m.gap_absolute),
            ineq_mean: Stat::of(ms.iter().map(|m| m.ineq_mean)),
            ineq_max: Stat::of(ms.iter().map(|m| m.ineq_max)),
            ineq_num_viol: Stat::of(ms.iter().map(|m| m.ineq_num_viol as f64)),
            feasibility: if ms.is_empty() { f64::NAN } else { 100.0 * feasible as f64 / ms.len() as f64 },
            eq_mean: Stat::of(ms.iter().map(|m| m.eq_mean)),
            eq_max: Stat::of(ms.iter().map(|m| m.eq_max)),
        }
    }
}

/// Metrics for one solution per instance.
pub fn metrics<'a, S: Scalar + 'a>(
    fam: &ProblemFamily<S>,
    rows: impl IntoIterator<Item = (ArrayView1<'a, S>, ArrayView1<'a, S>, Option<&'a Label<S>>)>,
    eps: f64,
) -> MetricsRecord {
    let ms: Vec<InstanceMetrics> = rows.into_iter().map(|(x, y, l)| instance_metrics(fam, x, y, l, eps)).collect();
    MetricsRecord::from_instances(&ms)
}

use std::cmp::Ordering;
use std::fmt;

use crate::problems::Candidate;
use crate::Scalar;

/// Largest exponent used for feasible weights, keeping `exp` finite.
pub const MAX_EXPONENT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMode {
    /// `exp(β (f* − f))` for feasible points, minus the total violation otherwise.
    Full,
    /// Minus the total violation for every point.
    ViolationOnly,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Full => "full",
            WeightMode::ViolationOnly => "violation",
        }
    }

    /// Bootstrap epochs alternate, starting from `Full` on even epochs.
    pub fn for_epoch(epoch: usize) -> Self {
        if epoch % 2 == 0 {
            WeightMode::Full
        } else {
            WeightMode::ViolationOnly
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters shared by every weight evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams<S> {
    pub beta: S,
    /// Violation threshold below which a constraint counts as satisfied.
    pub eps: S,
}

impl<S: Scalar> Default for WeightParams<S> {
    fn default() -> Self {
        Self { beta: S::one(), eps: S::lit(0.01) }
    }
}

pub fn weight<S: Scalar>(cand: &Candidate<S>, f_star: S, mode: WeightMode, params: &WeightParams<S>) -> S {
    let penalty = -cand.total_violation();
    match mode {
        WeightMode::ViolationOnly => penalty,
        WeightMode::Full if cand.is_feasible(params.eps) => {
            (params.beta * (f_star - cand.objective)).min(S::lit(MAX_EXPONENT)).exp()
        }
        WeightMode::Full => penalty,
    }
}

/// Mean-shifted weights `max(ω − ω̄, 0)`, applied only when some weight is
/// negative; otherwise the weights pass through.
pub fn modified_weights<S: Scalar>(w: &[S]) -> Vec<S> {
    if w.is_empty() || !w.iter().any(|&v| v < S::zero()) {
        return w.to_vec();
    }
    let mean = w.iter().copied().sum::<S>() / S::lit(w.len() as f64);
    w.iter().map(|&v| (v - mean).max(S::zero())).collect()
}

/// Total order of candidates by full-mode weight, independent of `f*`:
/// feasible beats infeasible, then lower objective, then lower total violation.
pub fn quality_cmp<S: Scalar>(a: &Candidate<S>, b: &Candidate<S>, eps: S) -> Ordering {
    match (a.is_feasible(eps), b.is_feasible(eps)) {
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (true, true) => b.objective.partial_cmp(&a.objective).unwrap_or(Ordering::Equal),
        (false, false) => b.total_violation().partial_cmp(&a.total_violation()).unwrap_or(Ordering::Equal),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn cand(f: f64, viol: Array1<f64>) -> Candidate<f64> {
        Candidate { z: Array1::zeros(0), y: Array1::zeros(0), objective: f, violations: viol, weight: 0.0, modified_weight: 0.0 }
    }

    #[test]
    fn weight_examples() {
        let p = WeightParams::default();
        assert_eq!(weight(&cand(2.0, array![0.0, 0.005]), 2.0, WeightMode::Full, &p), 1.0);
        let w = weight(&cand(2.0, array![0.5, 0.2]), 2.0, WeightMode::Full, &p);
        assert!((w + 0.7).abs() < 1e-15);
        assert_eq!(weight(&cand(9.0, array![0.0, 0.0]), 2.0, WeightMode::ViolationOnly, &p), 0.0);
        let w = weight(&cand(1.0, array![0.0]), 3.0, WeightMode::Full, &WeightParams { beta: 0.5, eps: 0.01 });
        assert!((w - 1f64.exp()).abs() < 1e-15);
        let huge = weight(&cand(-1e6, array![0.0]), 0.0, WeightMode::Full, &p);
        assert_eq!(huge, MAX_EXPONENT.exp());
    }

    #[test]
    fn modified_weight_examples() {
        let m: Vec<f64> = modified_weights(&[1.0, 0.2, -0.7]);
        let mean = 0.5 / 3.0;
        assert!((m[0] - (1.0 - mean)).abs() < 1e-15);
        assert!((m[1] - (0.2 - mean)).abs() < 1e-15);
        assert_eq!(m[2], 0.0);
        assert!((m[0] - 0.8333).abs() < 1e-4 && (m[1] - 0.0333).abs() < 1e-4);
        assert_eq!(modified_weights(&[0.5, 1.0, 0.0]), vec![0.5, 1.0, 0.0]);
        assert_eq!(modified_weights(&[-0.3, -0.3, -0.3]), vec![0.0, 0.0, 0.0]);
        assert!(modified_weights::<f64>(&[]).is_empty());
    }

    #[test]
    fn alternation_starts_full() {
        assert_eq!(WeightMode::for_epoch(2), WeightMode::Full);
        assert_eq!(WeightMode::for_epoch(3), WeightMode::ViolationOnly);
    }

    #[test]
    fn quality_order_matches_weight_order() {
        let p = WeightParams::default();
        let cs = [
            cand(1.0, array![0.0]),
            cand(2.0, array![0.0]),
            cand(-5.0, array![0.3]),
            cand(-9.0, array![0.1, 0.05]),
        ];
        for a in &cs {
            for b in &cs {
                let wa = weight(a, 0.0, WeightMode::Full, &p);
                let wb = weight(b, 0.0, WeightMode::Full, &p);
                assert_eq!(quality_cmp(a, b, p.eps), wa.partial_cmp(&wb).unwrap());
            }
        }
    }
}

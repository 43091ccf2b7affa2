//! Multi-start local solver for nonconvex families.
//!
//! Each start runs a quadratic-penalty descent in the free variables, then a
//! projected-gradient polish on the full vector with exact Euclidean
//! projections onto the feasible polytope.

use ndarray::{Array1, ArrayView1};

use super::qp::{self, OracleSolution, QpData, WarmStart};
use crate::error::{Error, Result};
use crate::linalg::{norm2, norm_inf};
use crate::problems::ProblemFamily;
use crate::rng::{self, domain, Rng};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonconvexSettings {
    pub starts: usize,
    pub penalty: f64,
    pub penalty_rounds: usize,
    pub descent_iters: usize,
    pub polish_iters: usize,
    pub seed: u64,
}

impl Default for NonconvexSettings {
    fn default() -> Self {
        Self { starts: 16, penalty: 10.0, penalty_rounds: 12, descent_iters: 300, polish_iters: 300, seed: 0 }
    }
}

const DIVERGED: f64 = 1e6;

struct Local<S> {
    y: Array1<S>,
    f: S,
    viol: S,
}

/// Best feasible local solution over the anchor start and `starts − 1`
/// perturbations of it. Ties in objective go to the lexicographically
/// smallest `y`.
pub fn solve_nonconvex<S: Scalar>(
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    settings: &NonconvexSettings,
    tol: S,
) -> Result<OracleSolution<S>> {
    if x.len() != fam.n_eq() {
        return Err(Error::Shape(format!("x of width {} for n_eq = {}", x.len(), fam.n_eq())));
    }
    let comp = fam.completion();
    let z0 = comp.project(fam.anchor(x).view());
    let radius = norm_inf(z0.view()).max(S::one());
    let mut r = rng::stream(settings.seed, &[domain::ORACLE, fam.digest(), rng::mix(&x.iter().map(|v| v.to_f64_lossy().to_bits()).collect::<Vec<_>>())]);

    let mut best: Option<Local<S>> = None;
    for start in 0..settings.starts.max(1) {
        let z = if start == 0 { z0.clone() } else { &z0 + &ball_point(&mut r, z0.len(), radius) };
        let Some(local) = run_start(fam, x, z, settings)? else {
            continue;
        };
        if local.viol > tol {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let close = (local.f - b.f).abs() <= S::lit(1e-9) * (S::one() + b.f.abs());
                if close {
                    lex_less(&local.y, &b.y)
                } else {
                    local.f < b.f
                }
            }
        };
        if better {
            best = Some(local);
        }
    }
    let best = best.ok_or_else(|| Error::Solver {
        iterations: settings.starts,
        residuals: "no start reached a feasible point".into(),
    })?;
    let residuals = stationarity_residuals(fam, x, &best.y);
    Ok(OracleSolution { f: best.f, y: best.y, residuals, iterations: settings.starts })
}

fn lex_less<S: Scalar>(a: &Array1<S>, b: &Array1<S>) -> bool {
    for (u, v) in a.iter().zip(b) {
        if u < v {
            return true;
        }
        if u > v {
            return false;
        }
    }
    false
}

/// Uniform point in the `d`-ball of the given radius.
fn ball_point<S: Scalar>(r: &mut Rng, d: usize, radius: S) -> Array1<S> {
    let dir: Array1<S> = rng::normal_vec(r, d);
    let nrm = norm2(dir.view()).max(S::min_positive_value());
    let u: f64 = rng::uniform(r, 0.0, 1.0);
    let scale = radius * S::lit(u.powf(1.0 / d.max(1) as f64)) / nrm;
    dir * scale
}

fn penalty_value<S: Scalar>(fam: &ProblemFamily<S>, y: &Array1<S>, mu: S) -> S {
    let v = fam.violations(y.view());
    fam.objective(y.view()) + mu * v.dot(&v)
}

fn run_start<S: Scalar>(
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    mut z: Array1<S>,
    settings: &NonconvexSettings,
) -> Result<Option<Local<S>>> {
    let comp = fam.completion();
    let big = S::lit(DIVERGED);
    let mut mu = S::lit(settings.penalty);
    let mut step = S::one();
    let armijo = S::lit(1e-4);

    for _ in 0..settings.penalty_rounds {
        for _ in 0..settings.descent_iters {
            let y = comp.complete(z.view(), x)?;
            let phi = penalty_value(fam, &y, mu);
            let v = fam.violations(y.view());
            let gy = fam.objective_grad(y.view()) + fam.g().t().dot(&v) * (S::lit(2.0) * mu);
            let gz = comp.pullback(gy.view());
            let gn2 = gz.dot(&gz);
            if gn2.sqrt() <= S::lit(1e-10) * (S::one() + phi.abs()) {
                break;
            }
            step = step * S::lit(2.0);
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &z - &(&gz * step);
                let yc = comp.complete(cand.view(), x)?;
                if penalty_value(fam, &yc, mu) <= phi - armijo * step * gn2 {
                    z = cand;
                    accepted = true;
                    break;
                }
                step = step * S::lit(0.5);
            }
            if !accepted || norm_inf(z.view()) > big {
                break;
            }
        }
        if norm_inf(z.view()) > big {
            return Ok(None);
        }
        let y = comp.complete(z.view(), x)?;
        if norm_inf(fam.violations(y.view()).view()) <= S::lit(1e-6) {
            break;
        }
        mu = mu * S::lit(2.0);
    }

    let y = comp.complete(z.view(), x)?;
    let Ok(first) = qp::project(fam, x, y.view(), WarmStart::default()) else {
        return Ok(None);
    };
    let mut y = first.y;
    let mut dual = first.dual;
    let mut f = fam.objective(y.view());
    let mut s = S::one();
    for _ in 0..settings.polish_iters {
        let g = fam.objective_grad(y.view());
        let mut moved = false;
        for _ in 0..40 {
            let target = &y - &(&g * s);
            let Ok(p) = qp::project(fam, x, target.view(), WarmStart { y: Some(y.clone()), dual: Some(&dual * s) }) else {
                s = s * S::lit(0.5);
                continue;
            };
            let d = &p.y - &y;
            let fp = fam.objective(p.y.view());
            if fp <= f + g.dot(&d) + d.dot(&d) / (S::lit(2.0) * s) {
                let small = norm_inf(d.view()) <= S::lit(1e-11) * (S::one() + norm_inf(y.view()));
                y = p.y;
                dual = p.dual / s;
                f = fp;
                moved = !small;
                s = s * S::lit(1.5);
                break;
            }
            s = s * S::lit(0.5);
        }
        if !moved || norm_inf(y.view()) > big {
            break;
        }
    }
    if norm_inf(y.view()) > big {
        return Ok(None);
    }
    let viol = norm_inf(fam.violations(y.view()).view()).max(norm_inf(fam.eq_residual(y.view(), x).view()));
    Ok(Some(Local { y, f, viol }))
}

/// First-order residuals at `y`, using multipliers of the projection of
/// `y − ∇f(y)` as a proxy.
fn stationarity_residuals<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, y: &Array1<S>) -> qp::KktResiduals<S> {
    let data = QpData::constraints_of(fam, x, Array1::zeros(fam.n()), fam.objective_grad(y.view()));
    let target = y - &fam.objective_grad(y.view());
    let dual = qp::project(fam, x, target.view(), WarmStart::default()).map(|p| p.dual).unwrap_or_else(|_| Array1::zeros(fam.n_eq() + fam.n_ineq()));
    data.kkt(y, &dual)
}

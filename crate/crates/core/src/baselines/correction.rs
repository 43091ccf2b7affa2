use ndarray::{Array1, ArrayView1};

use crate::error::Result;
use crate::problems::ProblemFamily;
use crate::Scalar;

const MAX_HALVINGS: usize = 30;

/// `‖ReLU(Gy − h)‖²`.
pub fn violation_penalty<S: Scalar>(fam: &ProblemFamily<S>, y: ArrayView1<S>) -> S {
    fam.violations(y).iter().map(|&v| v * v).sum()
}

/// Accepted step sizes and active sets of a correction run, enough to
/// differentiate through it.
#[derive(Debug, Clone, Default)]
pub struct CorrectionTrace<S> {
    steps: Vec<(S, Vec<bool>)>,
}

impl<S: Scalar> CorrectionTrace<S> {
    pub fn accepted_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Direction in `y` of a free-variable perturbation `v`.
fn lift<S: Scalar>(fam: &ProblemFamily<S>, v: ArrayView1<S>) -> Result<Array1<S>> {
    fam.complete(v, Array1::zeros(fam.n_eq()).view())
}

/// Gradient descent on the violation penalty in free-variable space, halving
/// the step until the penalty does not increase. Stops early once feasible or
/// when no step size helps.
pub fn correct_free<S: Scalar>(
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    z: Array1<S>,
    steps: usize,
    lr: S,
) -> Result<(Array1<S>, Array1<S>, CorrectionTrace<S>)> {
    let mut z = z;
    let mut y = fam.complete(z.view(), x)?;
    let mut phi = violation_penalty(fam, y.view());
    let mut trace = CorrectionTrace { steps: Vec::new() };
    let two = S::lit(2.0);
    for _ in 0..steps {
        if phi <= S::zero() {
            break;
        }
        let r = fam.violations(y.view());
        let active: Vec<bool> = r.iter().map(|&v| v > S::zero()).collect();
        let grad = fam.completion().pullback(fam.g().t().dot(&r).mapv(|v| v * two).view());
        let mut step = lr;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &z - &grad.mapv(|g| g * step);
            let yc = fam.complete(cand.view(), x)?;
            let pc = violation_penalty(fam, yc.view());
            if pc <= phi {
                accepted = Some((cand, yc, pc));
                break;
            }
            step = step / two;
        }
        let Some((zn, yn, pn)) = accepted else { break };
        trace.steps.push((step, active));
        z = zn;
        y = yn;
        phi = pn;
    }
    Ok((z, y, trace))
}

/// Corrects a full decision vector. The result never has a larger violation
/// penalty than `y`; a feasible `y` or `steps = 0` returns `y` unchanged.
pub fn dc3_correct<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, y: ArrayView1<S>, steps: usize, lr: S) -> Result<Array1<S>> {
    if steps == 0 || violation_penalty(fam, y) <= S::zero() {
        return Ok(y.to_owned());
    }
    let z = fam.completion().project(y);
    let (_, yc, _) = correct_free(fam, x, z, steps, lr)?;
    if violation_penalty(fam, yc.view()) <= violation_penalty(fam, y) {
        Ok(yc)
    } else {
        Ok(y.to_owned())
    }
}

/// Pulls a gradient on the corrected free variables back through every
/// accepted step `z ← z − s ∇φ(z)`, whose Jacobian is `I − 2s JᵀGᵀDGJ`.
pub fn correction_vjp<S: Scalar>(fam: &ProblemFamily<S>, trace: &CorrectionTrace<S>, grad: Array1<S>) -> Result<Array1<S>> {
    let g = fam.g();
    let mut v = grad;
    for (step, active) in trace.steps.iter().rev() {
        let jv = lift(fam, v.view())?;
        let mut gjv = g.dot(&jv);
        for (e, &a) in gjv.iter_mut().zip(active) {
            if !a {
                *e = S::zero();
            }
        }
        let hv = fam.completion().pullback(g.t().dot(&gjv).view());
        let k = S::lit(2.0) * *step;
        v = &v - &hv.mapv(|h| h * k);
    }
    Ok(v)
}

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::NoisePredictor;
use crate::error::{shape_err, Error, Result};
use crate::rng::{self, Rng};
use crate::Scalar;

/// One reverse step
/// `y_{t-1} = (y_t - β_t/sqrt(1-ᾱ_t) ε̂) / sqrt(α_t) + σ_t(η) z`.
///
/// No noise is added at `t = 1`; with `eta = 0` the step is deterministic.
pub fn denoise_step<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    model: &P,
    y_t: ArrayView2<S>,
    cond: ArrayView2<S>,
    t: usize,
    eta: S,
    z: ArrayView2<S>,
) -> Result<Array2<S>> {
    let sched = model.schedule();
    if t == 0 || t > sched.steps() {
        return Err(Error::Domain(format!("step {t} outside [1, {}]", sched.steps())));
    }
    if z.dim() != y_t.dim() {
        return Err(Error::Shape("noise batch does not match state batch".into()));
    }
    let eps = model.predict(y_t, t, cond)?;
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampling(format!("non-finite noise prediction at step {t}")));
    }
    let coef = sched.beta(t) / (S::one() - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = S::one() / sched.alpha(t).sqrt();
    let sigma = if t > 1 { sched.sigma(t, eta) } else { S::zero() };
    let mut out = Array2::zeros(y_t.raw_dim());
    Zip::from(&mut out).and(&y_t).and(&eps).and(&z).for_each(|o, &y, &e, &zz| {
        *o = (y - coef * e) * inv_sqrt_alpha + sigma * zz;
    });
    Ok(out)
}

/// Runs the full reverse chain from explicit initial states, one RNG per row.
pub fn sample_from<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    model: &P,
    cond: ArrayView2<S>,
    init: Array2<S>,
    eta: S,
    rngs: &mut [Rng],
) -> Result<Array2<S>> {
    if init.ncols() != model.out_dim() {
        return Err(shape_err("initial state width", model.out_dim(), init.ncols()));
    }
    if rngs.len() != init.nrows() || cond.nrows() != init.nrows() {
        return Err(Error::Shape("rows, conditions and RNG streams must agree".into()));
    }
    let sched = model.schedule();
    let mut y = init;
    let mut z = Array2::zeros(y.raw_dim());
    for t in (1..=sched.steps()).rev() {
        if t > 1 && sched.sigma(t, eta) > S::zero() {
            for (mut row, r) in z.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
                row.mapv_inplace(|_| rng::normal(r));
            }
        } else {
            z.fill(S::zero());
        }
        y = denoise_step(model, y.view(), cond, t, eta, z.view())?;
    }
    Ok(y)
}

/// Samples one reverse trajectory per row of `cond`. Row `i` draws its initial
/// noise and step noise from the stream `(seed, ids[i])`.
pub fn sample_rows<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    model: &P,
    cond: ArrayView2<S>,
    eta: S,
    seed: u64,
    ids: &[u64],
) -> Result<Array2<S>> {
    if ids.len() != cond.nrows() {
        return Err(shape_err("trajectory ids", cond.nrows(), ids.len()));
    }
    let mut rngs: Vec<Rng> = ids.iter().map(|&id| rng::stream(seed, &[rng::domain::SAMPLE, id])).collect();
    let d = model.out_dim();
    let mut init = Array2::zeros((cond.nrows(), d));
    for (mut row, r) in init.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
        row.mapv_inplace(|_| rng::normal(r));
    }
    sample_from(model, cond, init, eta, &mut rngs)
}

/// `k` independent candidates for a single condition vector.
pub fn sample_candidates<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    model: &P,
    cond: ArrayView1<S>,
    k: usize,
    eta: S,
    seed: u64,
) -> Result<Array2<S>> {
    if k == 0 {
        return Err(Error::Domain("need at least one candidate".into()));
    }
    if cond.len() != model.cond_dim() {
        return Err(shape_err("condition width", model.cond_dim(), cond.len()));
    }
    let rows = cond.insert_axis(Axis(0)).broadcast((k, cond.len())).expect("broadcast").to_owned();
    let ids: Vec<u64> = (0..k as u64).collect();
    sample_rows(model, rows.view(), eta, seed, &ids)
}

//! Operator-splitting QP solver in the style of OSQP:
//! `min ½ yᵀ diag(P) y + qᵀ y  s.t.  l ≤ C y ≤ u`, followed by an active-set
//! polish that solves the reduced KKT system directly.

use std::fmt;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, Cholesky, Lu};
use crate::problems::{ProblemFamily, ProblemKind};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub adapt_interval: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-8,
            eps_rel: 1e-6,
            max_iter: 50_000,
            adapt_interval: 25,
            polish: true,
        }
    }
}

/// Problem data; the first `n_eq` rows of `c` are equalities (`l = u`).
#[derive(Debug, Clone)]
pub(crate) struct QpData<S> {
    pub p_diag: Array1<S>,
    pub q: Array1<S>,
    pub c: Array2<S>,
    pub l: Array1<S>,
    pub u: Array1<S>,
    pub n_eq: usize,
}

impl<S: Scalar> QpData<S> {
    /// Rows `[A; G]` with bounds `x = Ay` and `Gy ≤ h`.
    pub fn constraints_of(fam: &ProblemFamily<S>, x: ArrayView1<S>, p_diag: Array1<S>, q: Array1<S>) -> Self {
        let (n_eq, n_ineq) = (fam.n_eq(), fam.n_ineq());
        let mut c = Array2::zeros((n_eq + n_ineq, fam.n()));
        c.slice_mut(s![..n_eq, ..]).assign(&fam.a());
        c.slice_mut(s![n_eq.., ..]).assign(&fam.g());
        let mut l = Array1::from_elem(n_eq + n_ineq, S::neg_infinity());
        let mut u = Array1::zeros(n_eq + n_ineq);
        l.slice_mut(s![..n_eq]).assign(&x);
        u.slice_mut(s![..n_eq]).assign(&x);
        u.slice_mut(s![n_eq..]).assign(&fam.h());
        Self { p_diag, q, c, l, u, n_eq }
    }

    fn n(&self) -> usize {
        self.q.len()
    }

    fn m(&self) -> usize {
        self.l.len()
    }

    fn px(&self, y: &Array1<S>) -> Array1<S> {
        &self.p_diag * y
    }

    /// Residuals of the KKT conditions for primal `y` and multipliers `dual`
    /// (`dual_i > 0` at an active upper bound, `< 0` at an active lower bound).
    pub fn kkt(&self, y: &Array1<S>, dual: &Array1<S>) -> KktResiduals<S> {
        let cy = self.c.dot(y);
        let mut eq = S::zero();
        let mut ineq = S::zero();
        let mut comp = S::zero();
        let mut sign = S::zero();
        for i in 0..self.m() {
            let (v, lo, hi, d) = (cy[i], self.l[i], self.u[i], dual[i]);
            if i < self.n_eq {
                eq = eq.max((v - hi).abs());
                continue;
            }
            ineq = ineq.max((v - hi).max(lo - v).max(S::zero()));
            if d > S::zero() {
                comp = comp.max((d * (hi - v)).abs());
            } else if d < S::zero() {
                if lo.is_finite() {
                    comp = comp.max((d * (v - lo)).abs());
                } else {
                    sign = sign.max(-d);
                }
            }
        }
        let stat = self.px(y) + &self.q + self.c.t().dot(dual);
        KktResiduals { eq, ineq, stationarity: norm_inf(stat.view()), complementarity: comp, dual_sign: sign }
    }
}

/// Largest violations of each KKT condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals<S> {
    pub eq: S,
    pub ineq: S,
    pub stationarity: S,
    pub complementarity: S,
    /// Largest multiplier of the wrong sign.
    pub dual_sign: S,
}

impl<S: Scalar> KktResiduals<S> {
    pub fn max(&self) -> S {
        self.eq.max(self.ineq).max(self.stationarity).max(self.complementarity).max(self.dual_sign)
    }
}

impl<S: Scalar> fmt::Display for KktResiduals<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eq {:.3e}, ineq {:.3e}, stationarity {:.3e}, complementarity {:.3e}, dual sign {:.3e}",
            self.eq.to_f64_lossy(),
            self.ineq.to_f64_lossy(),
            self.stationarity.to_f64_lossy(),
            self.complementarity.to_f64_lossy(),
            self.dual_sign.to_f64_lossy()
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) struct QpOutput<S> {
    pub y: Array1<S>,
    pub dual: Array1<S>,
    pub iterations: usize,
    pub polished: bool,
}

/// Primal/dual starting point for warm starts.
#[derive(Debug, Clone, Default)]
pub(crate) struct WarmStart<S> {
    pub y: Option<Array1<S>>,
    pub dual: Option<Array1<S>>,
}

struct Kkt<S> {
    chol: Cholesky<S>,
}

impl<S: Scalar> Kkt<S> {
    fn factor(data: &QpData<S>, sigma: S, rho: &Array1<S>) -> Result<Self> {
        let n = data.n();
        let scaled = &data.c * &rho.view().insert_axis(Axis(1));
        let mut m = data.c.t().dot(&scaled);
        for i in 0..n {
            m[[i, i]] += data.p_diag[i] + sigma;
        }
        Ok(Self { chol: Cholesky::factor(m.view())? })
    }
}

fn rho_vector<S: Scalar>(data: &QpData<S>, rho: S) -> Array1<S> {
    Array1::from_shape_fn(data.m(), |i| {
        if i < data.n_eq || data.l[i] == data.u[i] {
            rho * S::lit(1e3)
        } else {
            rho
        }
    })
}

pub(crate) fn solve_data<S: Scalar>(data: &QpData<S>, settings: &QpSettings, warm: WarmStart<S>) -> Result<QpOutput<S>> {
    let (n, m) = (data.n(), data.m());
    let lit = S::lit;
    let sigma = lit(settings.sigma);
    let alpha = lit(settings.alpha);
    let (rho_min, rho_max) = (lit(1e-6), lit(1e6));
    let mut rho = lit(settings.rho);
    let mut rho_vec = rho_vector(data, rho);
    let mut kkt = Kkt::factor(data, sigma, &rho_vec)?;

    let mut x = warm.y.unwrap_or_else(|| Array1::zeros(n));
    let mut z = data.c.dot(&x).iter().zip(data.l.iter().zip(&data.u)).map(|(&v, (&lo, &hi))| v.max(lo).min(hi)).collect::<Array1<S>>();
    let mut y = warm.dual.unwrap_or_else(|| Array1::zeros(m));

    let eps_abs = lit(settings.eps_abs);
    let eps_rel = lit(settings.eps_rel);
    let mut last = (S::infinity(), S::infinity());
    for k in 1..=settings.max_iter {
        let rhs = &x * sigma - &data.q + data.c.t().dot(&(&rho_vec * &z - &y));
        let x_tilde = kkt.chol.solve(rhs.view());
        let z_tilde = data.c.dot(&x_tilde);
        x = &x_tilde * alpha + &x * (S::one() - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (S::one() - alpha);
        z = Array1::from_shape_fn(m, |i| (z_relaxed[i] + y[i] / rho_vec[i]).max(data.l[i]).min(data.u[i]));
        y = &y + &(&rho_vec * &(&z_relaxed - &z));

        let check = k % 5 == 0 || k == settings.max_iter;
        if !check && k % settings.adapt_interval.max(1) != 0 {
            continue;
        }
        let cx = data.c.dot(&x);
        let px = data.px(&x);
        let cty = data.c.t().dot(&y);
        let r_prim = norm_inf((&cx - &z).view());
        let r_dual = norm_inf((&px + &data.q + &cty).view());
        let scale_prim = norm_inf(cx.view()).max(norm_inf(z.view()));
        let scale_dual = norm_inf(px.view()).max(norm_inf(cty.view())).max(norm_inf(data.q.view()));
        last = (r_prim, r_dual);
        if !r_prim.is_finite() || !r_dual.is_finite() {
            return Err(Error::Solver { iterations: k, residuals: format!("diverged: primal {r_prim}, dual {r_dual}") });
        }
        if r_prim <= eps_abs + eps_rel * scale_prim && r_dual <= eps_abs + eps_rel * scale_dual {
            let mut out = QpOutput { y: x, dual: y, iterations: k, polished: false };
            if settings.polish {
                polish(data, &mut out);
            }
            return Ok(out);
        }
        if settings.adapt_interval > 0 && k % settings.adapt_interval == 0 {
            let tiny = lit(1e-30);
            let ratio = ((r_prim / (scale_prim + tiny)) / (r_dual / (scale_dual + tiny) + tiny)).sqrt();
            let new_rho = (rho * ratio).max(rho_min).min(rho_max);
            if new_rho > rho * lit(5.0) || new_rho < rho * lit(0.2) {
                rho = new_rho;
                rho_vec = rho_vector(data, rho);
                kkt = Kkt::factor(data, sigma, &rho_vec)?;
            }
        }
    }
    Err(Error::Solver {
        iterations: settings.max_iter,
        residuals: format!("primal {:.3e}, dual {:.3e}", last.0.to_f64_lossy(), last.1.to_f64_lossy()),
    })
}

/// Re-solves the equality-constrained problem on the guessed active set and
/// keeps the result when it improves the KKT residuals.
fn polish<S: Scalar>(data: &QpData<S>, out: &mut QpOutput<S>) {
    let n = data.n();
    let cx = data.c.dot(&out.y);
    let active: Vec<usize> = (0..data.m())
        .filter(|&i| i < data.n_eq || data.u[i] - cx[i] < out.dual[i] || (data.l[i].is_finite() && cx[i] - data.l[i] < -out.dual[i]))
        .collect();
    let na = active.len();
    let delta = S::lit(1e-9);
    let dim = n + na;
    let mut kkt = Array2::<S>::zeros((dim, dim));
    let mut rhs = Array1::<S>::zeros(dim);
    for i in 0..n {
        kkt[[i, i]] = data.p_diag[i];
        rhs[i] = -data.q[i];
    }
    for (k, &row) in active.iter().enumerate() {
        for j in 0..n {
            kkt[[n + k, j]] = data.c[[row, j]];
            kkt[[j, n + k]] = data.c[[row, j]];
        }
        let upper = row < data.n_eq || data.u[row] - cx[row] < out.dual[row];
        rhs[n + k] = if upper { data.u[row] } else { data.l[row] };
    }
    let mut reg = kkt.clone();
    for i in 0..dim {
        reg[[i, i]] += if i < n { delta } else { -delta };
    }
    let Ok(lu) = Lu::factor(reg.view()) else {
        return;
    };
    let mut sol = lu.solve(rhs.view());
    for _ in 0..5 {
        let r = &rhs - &kkt.dot(&sol);
        sol = sol + lu.solve(r.view());
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return;
    }
    let y = sol.slice(s![..n]).to_owned();
    let mut dual = Array1::zeros(data.m());
    for (k, &row) in active.iter().enumerate() {
        dual[row] = sol[n + k];
    }
    if data.kkt(&y, &dual).max() <= data.kkt(&out.y, &out.dual).max() {
        out.y = y;
        out.dual = dual;
        out.polished = true;
    }
}

/// Oracle answer for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution<S> {
    pub y: Array1<S>,
    pub f: S,
    pub residuals: KktResiduals<S>,
    pub iterations: usize,
}

/// Solves a convex instance to KKT residuals at most `tol`.
pub fn solve_qp<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, tol: S) -> Result<OracleSolution<S>> {
    solve_qp_with(fam, x, tol, &QpSettings::default())
}

pub fn solve_qp_with<S: Scalar>(
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    tol: S,
    settings: &QpSettings,
) -> Result<OracleSolution<S>> {
    if fam.kind() == ProblemKind::Qpsr && fam.alpha() != S::zero() {
        return Err(Error::Oracle("sine-regularized objective is not a QP".into()));
    }
    if !fam.is_convex() {
        return Err(Error::Oracle("objective is not convex".into()));
    }
    if x.len() != fam.n_eq() {
        return Err(Error::Shape(format!("x of width {} for n_eq = {}", x.len(), fam.n_eq())));
    }
    let q = if fam.kind() == ProblemKind::Qpsr { Array1::zeros(fam.n()) } else { fam.p().to_owned() };
    let data = QpData::constraints_of(fam, x, fam.q_diag().to_owned(), q);
    let out = solve_data(&data, settings, WarmStart::default())?;
    let residuals = data.kkt(&out.y, &out.dual);
    if !(residuals.max() <= tol) {
        return Err(Error::Solver { iterations: out.iterations, residuals: residuals.to_string() });
    }
    let f = fam.objective(out.y.view());
    Ok(OracleSolution { y: out.y, f, residuals, iterations: out.iterations })
}

/// Euclidean projection onto `{A y = x, G y ≤ h}`.
pub(crate) fn project<S: Scalar>(
    fam: &ProblemFamily<S>,
    x: ArrayView1<S>,
    v: ArrayView1<S>,
    warm: WarmStart<S>,
) -> Result<QpOutput<S>> {
    let data = QpData::constraints_of(fam, x, Array1::ones(fam.n()), -v.to_owned());
    solve_data(&data, &QpSettings::default(), warm)
}

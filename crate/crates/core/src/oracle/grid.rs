//! Exhaustive grid oracle for families with two free variables.

use ndarray::{array, Array1, Array2, ArrayView1};

use super::qp::{KktResiduals, OracleSolution};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::problems::ProblemFamily;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSettings {
    /// Points per axis.
    pub resolution: usize,
    /// Extra zoom passes around the incumbent, each over ±2 cells.
    pub refine: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { resolution: 801, refine: 2 }
    }
}

/// Box `[lo, hi]` in free-variable space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBox<S> {
    pub lo: [S; 2],
    pub hi: [S; 2],
}

impl<S: Scalar> GridBox<S> {
    pub fn cell(&self, resolution: usize) -> [S; 2] {
        let k = S::lit((resolution.max(2) - 1) as f64);
        [(self.hi[0] - self.lo[0]) / k, (self.hi[1] - self.lo[1]) / k]
    }
}

/// Inequalities restricted to free variables: `M z ≤ b`.
struct Reduced<S> {
    m: Array2<S>,
    b: Array1<S>,
    offset: Array1<S>,
}

fn reduce<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>) -> Result<Reduced<S>> {
    let comp = fam.completion();
    let offset = comp.complete(Array1::zeros(2).view(), x)?;
    let e0 = comp.complete(array![S::one(), S::zero()].view(), x)? - &offset;
    let e1 = comp.complete(array![S::zero(), S::one()].view(), x)? - &offset;
    let g = fam.g();
    let mut m = Array2::zeros((g.nrows(), 2));
    m.column_mut(0).assign(&g.dot(&e0));
    m.column_mut(1).assign(&g.dot(&e1));
    let b = &fam.h() - &g.dot(&offset);
    Ok(Reduced { m, b, offset })
}

/// A polygon vertex and the two constraint rows that meet there.
#[derive(Clone, Copy)]
struct Vertex<S> {
    z: [S; 2],
    rows: (usize, usize),
}

struct Polygon<S> {
    red: Reduced<S>,
    vertices: Vec<Vertex<S>>,
    bx: GridBox<S>,
}

/// Bounding box of the feasible polygon, or of the objective's sublevel set
/// through the best feasible vertex when the polygon is unbounded but the
/// objective is strongly convex in the free variables.
pub fn feasible_box<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>) -> Result<GridBox<S>> {
    Ok(polygon(fam, x)?.bx)
}

fn polygon<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>) -> Result<Polygon<S>> {
    if fam.n_free() != 2 {
        return Err(Error::Oracle(format!("grid search needs 2 free variables, family has {}", fam.n_free())));
    }
    let red = reduce(fam, x)?;
    let rows = red.m.nrows();
    let tol = S::lit(1e-9);
    let scale = red.b.iter().fold(S::one(), |a, v| a.max(v.abs()));
    let feasible = |z: [S; 2]| (0..rows).all(|i| red.m[[i, 0]] * z[0] + red.m[[i, 1]] * z[1] - red.b[i] <= tol * scale);

    let mut vertices = Vec::new();
    for i in 0..rows {
        for j in (i + 1)..rows {
            let (a, b, c, d) = (red.m[[i, 0]], red.m[[i, 1]], red.m[[j, 0]], red.m[[j, 1]]);
            let det = a * d - b * c;
            if det.abs() <= S::lit(1e-12) * (a.abs() + b.abs()) * (c.abs() + d.abs()) {
                continue;
            }
            let z = [(red.b[i] * d - b * red.b[j]) / det, (a * red.b[j] - c * red.b[i]) / det];
            if feasible(z) {
                vertices.push(Vertex { z, rows: (i, j) });
            }
        }
    }
    if vertices.is_empty() {
        return Err(Error::Oracle("feasible region is empty or has no vertex".into()));
    }
    let unbounded = rows < 2
        || (0..rows).any(|i| {
            let dirs = [[-red.m[[i, 1]], red.m[[i, 0]]], [red.m[[i, 1]], -red.m[[i, 0]]]];
            dirs.iter().any(|d| (0..rows).all(|j| red.m[[j, 0]] * d[0] + red.m[[j, 1]] * d[1] <= S::lit(1e-12)))
        });
    let bx = if unbounded {
        sublevel_box(fam, x, &red, &vertices)?
    } else {
        let mut bx = GridBox { lo: vertices[0].z, hi: vertices[0].z };
        for v in &vertices {
            for k in 0..2 {
                bx.lo[k] = bx.lo[k].min(v.z[k]);
                bx.hi[k] = bx.hi[k].max(v.z[k]);
            }
        }
        bx
    };
    Ok(Polygon { red, vertices, bx })
}

fn sublevel_box<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, red: &Reduced<S>, vertices: &[Vertex<S>]) -> Result<GridBox<S>> {
    if !fam.is_convex() {
        return Err(Error::Oracle("feasible region is unbounded and the objective is not convex".into()));
    }
    let comp = fam.completion();
    let e0 = comp.complete(array![S::one(), S::zero()].view(), x)? - &red.offset;
    let e1 = comp.complete(array![S::zero(), S::one()].view(), x)? - &red.offset;
    let q = fam.q_diag();
    let quad = |u: &Array1<S>, v: &Array1<S>| (&(&q * u) * v).sum();
    let hess = array![[quad(&e0, &e0), quad(&e0, &e1)], [quad(&e1, &e0), quad(&e1, &e1)]];
    let chol = Cholesky::factor(hess.view())
        .map_err(|_| Error::Oracle("feasible region is unbounded and the objective is not strongly convex".into()))?;
    let f_at = |z: [S; 2]| -> Result<S> { Ok(fam.objective(comp.complete(array![z[0], z[1]].view(), x)?.view())) };
    let grad0 = fam.objective_grad(red.offset.view());
    let lin = array![grad0.dot(&e0), grad0.dot(&e1)];
    let center = chol.solve(lin.mapv(|v| -v).view());
    let f_min = f_at([center[0], center[1]])?;
    let mut f_ref = S::infinity();
    for v in vertices {
        f_ref = f_ref.min(f_at(v.z)?);
    }
    let gap = (f_ref - f_min).max(S::zero());
    let inv00 = chol.solve(array![S::one(), S::zero()].view())[0];
    let inv11 = chol.solve(array![S::zero(), S::one()].view())[1];
    let r = [(S::lit(2.0) * gap * inv00).sqrt(), (S::lit(2.0) * gap * inv11).sqrt()];
    let pad = S::lit(1e-9);
    Ok(GridBox {
        lo: [center[0] - r[0] - pad, center[1] - r[1] - pad],
        hi: [center[0] + r[0] + pad, center[1] + r[1] + pad],
    })
}

/// Affine grid coordinates `z = origin + basis · w`. The axes are the slacks
/// of the two constraints meeting at the best vertex, so a narrow wedge at
/// that vertex fills the quadrant `w ≥ 0` instead of slipping between grid
/// lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame<S> {
    pub origin: [S; 2],
    pub basis: [[S; 2]; 2],
    pub lo: [S; 2],
    pub hi: [S; 2],
}

impl<S: Scalar> GridFrame<S> {
    pub fn point(&self, w: [S; 2]) -> [S; 2] {
        let b = &self.basis;
        [self.origin[0] + b[0][0] * w[0] + b[0][1] * w[1], self.origin[1] + b[1][0] * w[0] + b[1][1] * w[1]]
    }

    /// Longest diagonal of one grid cell, measured in free-variable space.
    pub fn cell_diameter(&self, resolution: usize) -> S {
        let k = S::lit((resolution.max(2) - 1) as f64);
        let c = [(self.hi[0] - self.lo[0]) / k, (self.hi[1] - self.lo[1]) / k];
        let b = &self.basis;
        let len = |s: S| {
            let d = [b[0][0] * c[0] + b[0][1] * c[1] * s, b[1][0] * c[0] + b[1][1] * c[1] * s];
            (d[0] * d[0] + d[1] * d[1]).sqrt()
        };
        len(S::one()).max(len(-S::one()))
    }
}

/// Grid frame covering every feasible point of [`feasible_box`].
pub fn search_frame<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>) -> Result<GridFrame<S>> {
    frame_of(fam, x, &polygon(fam, x)?)
}

fn frame_of<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, poly: &Polygon<S>) -> Result<GridFrame<S>> {
    let mut best: Option<(Vertex<S>, S)> = None;
    for &v in &poly.vertices {
        let f = fam.objective(fam.complete(array![v.z[0], v.z[1]].view(), x)?.view());
        if best.map_or(true, |(_, fb)| f < fb) {
            best = Some((v, f));
        }
    }
    let (v, _) = best.expect("polygon has a vertex");
    let (m, b) = (&poly.red.m, &poly.red.b);
    let (i, j) = v.rows;
    let det = m[[i, 0]] * m[[j, 1]] - m[[i, 1]] * m[[j, 0]];
    // z = v − M⁻¹ s for the slacks s = b − M z of rows i and j
    let basis = [[-m[[j, 1]] / det, m[[i, 1]] / det], [m[[j, 0]] / det, -m[[i, 0]] / det]];
    let bx = &poly.bx;
    let mut hi = [S::zero(); 2];
    for c in [[bx.lo[0], bx.lo[1]], [bx.lo[0], bx.hi[1]], [bx.hi[0], bx.lo[1]], [bx.hi[0], bx.hi[1]]] {
        for (k, r) in [i, j].into_iter().enumerate() {
            hi[k] = hi[k].max(b[r] - m[[r, 0]] * c[0] - m[[r, 1]] * c[1]);
        }
    }
    Ok(GridFrame { origin: v.z, basis, lo: [S::zero(); 2], hi })
}

/// Best feasible point of a regular grid over [`search_frame`], refined by
/// zooming around the incumbent.
pub fn grid_search_2d<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, settings: &GridSettings) -> Result<OracleSolution<S>> {
    let poly = polygon(fam, x)?;
    let frame = frame_of(fam, x, &poly)?;
    let red = &poly.red;
    let mut bx = GridBox { lo: frame.lo, hi: frame.hi };
    let res = settings.resolution.max(2);
    let tol = S::lit(1e-12) * red.b.iter().fold(S::one(), |a, v| a.max(v.abs()));
    let mut best: Option<([S; 2], S)> = None;
    for pass in 0..=settings.refine {
        let cell = bx.cell(res);
        let mut pass_best = best;
        for i in 0..res {
            let w0 = bx.lo[0] + cell[0] * S::lit(i as f64);
            for j in 0..res {
                let w1 = bx.lo[1] + cell[1] * S::lit(j as f64);
                let z = frame.point([w0, w1]);
                let ok = (0..red.m.nrows()).all(|k| red.m[[k, 0]] * z[0] + red.m[[k, 1]] * z[1] - red.b[k] <= tol);
                if !ok {
                    continue;
                }
                let y = fam.complete(array![z[0], z[1]].view(), x)?;
                let f = fam.objective(y.view());
                if pass_best.map_or(true, |(_, fb)| f < fb) {
                    pass_best = Some(([w0, w1], f));
                }
            }
        }
        best = pass_best;
        let Some((w, _)) = best else {
            return Err(Error::Oracle("no feasible grid point".into()));
        };
        if pass < settings.refine {
            let two = S::lit(2.0);
            bx = GridBox {
                lo: [w[0] - two * cell[0], w[1] - two * cell[1]],
                hi: [w[0] + two * cell[0], w[1] + two * cell[1]],
            };
        }
    }
    let (w, f) = best.expect("checked in loop");
    let z = frame.point(w);
    let y = fam.complete(array![z[0], z[1]].view(), x)?;
    let zero = S::zero();
    let residuals = KktResiduals {
        eq: crate::linalg::norm_inf(fam.eq_residual(y.view(), x).view()),
        ineq: crate::linalg::norm_inf(fam.violations(y.view()).view()),
        stationarity: zero,
        complementarity: zero,
        dual_sign: zero,
    };
    Ok(OracleSolution { y, f, residuals, iterations: (settings.refine + 1) * res * res })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FamilyParts, ProblemKind};

    fn fam(q: Array1<f64>, p: Array1<f64>, g: Array2<f64>, h: Array1<f64>, kind: ProblemKind) -> ProblemFamily<f64> {
        ProblemFamily::from_parts(FamilyParts { kind, seed: 0, q_diag: q, p, a: Array2::zeros((0, 2)), g, h, alpha: 1.0, basic: None })
            .unwrap()
    }

    fn unit_box() -> (Array2<f64>, Array1<f64>) {
        (array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], array![1.0, 1.0, 0.0, 0.0])
    }

    #[test]
    fn linear_objective_on_box() {
        let (g, h) = unit_box();
        let f = fam(array![0.0, 0.0], array![1.0, 1.0], g, h, ProblemKind::Qp);
        let s = grid_search_2d(&f, Array1::zeros(0).view(), &GridSettings { resolution: 101, refine: 0 }).unwrap();
        assert!(s.y[0].abs() < 1e-12 && s.y[1].abs() < 1e-12);
    }

    #[test]
    fn empty_region_is_an_error() {
        let (g, mut h) = unit_box();
        h[2] = -5.0;
        let f = fam(array![1.0, 1.0], array![0.0, 0.0], g, h, ProblemKind::Qp);
        assert!(matches!(grid_search_2d(&f, Array1::zeros(0).view(), &GridSettings::default()), Err(Error::Oracle(_))));
    }

    #[test]
    fn toy_optimum() {
        let t = ProblemFamily::<f64>::toy2d(0);
        let s = grid_search_2d(&t, Array1::zeros(0).view(), &GridSettings::default()).unwrap();
        assert!((s.f + 3.0).abs() < 1e-6);
    }

    #[test]
    fn unbounded_strongly_convex_uses_sublevel_box() {
        // only y₁ + y₂ ≥ 1; optimum of ½‖y‖² is (0.5, 0.5)
        let f = fam(array![1.0, 1.0], array![0.0, 0.0], array![[-1.0, -1.0], [1.0, -1.0]], array![-1.0, 10.0], ProblemKind::Qp);
        let s = grid_search_2d(&f, Array1::zeros(0).view(), &GridSettings::default()).unwrap();
        assert!((s.f - 0.25).abs() < 1e-6, "{}", s.f);
        let c = fam(array![-1.0, -1.0], array![0.0, 0.0], array![[-1.0, -1.0], [1.0, -1.0]], array![-1.0, 10.0], ProblemKind::Cqp);
        assert!(grid_search_2d(&c, Array1::zeros(0).view(), &GridSettings::default()).is_err());
    }

    #[test]
    fn thin_wedge_is_resolved() {
        // 0.3·y₁ ≤ y₂ ≤ 0.301·y₁; the unconstrained optimum (2, 0.6) lies on its edge
        let g = array![[-0.301, 1.0], [0.3, -1.0]];
        let f = fam(array![1.0, 1.0], array![-2.0, -0.6], g, array![0.0, 0.0], ProblemKind::Qp);
        let s = grid_search_2d(&f, Array1::zeros(0).view(), &GridSettings::default()).unwrap();
        assert!((s.f + 2.18).abs() < 1e-4, "{}", s.f);
    }

    #[test]
    fn resolution_doubling_respects_lipschitz_bound() {
        let t = ProblemFamily::<f64>::toy2d(0);
        let x = Array1::zeros(0);
        let coarse = GridSettings { resolution: 50, refine: 0 };
        let fine = GridSettings { resolution: 99, refine: 0 };
        let a = grid_search_2d(&t, x.view(), &coarse).unwrap();
        let b = grid_search_2d(&t, x.view(), &fine).unwrap();
        let diag = search_frame(&t, x.view()).unwrap().cell_diameter(coarse.resolution);
        // |∇f| = |y − 2| over the box [−2, 1]² is at most 4·√2
        let lipschitz = 4.0 * 2f64.sqrt();
        assert!((a.f - b.f).abs() <= lipschitz * diag);
    }
}

//! Small dense linear algebra: LU and Cholesky factorizations, pseudoinverse,
//! and pivoted basis selection. Problem sizes here are a few hundred at most.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::Scalar;

/// LU factorization with partial (row) pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu<S> {
    lu: Array2<S>,
    perm: Vec<usize>,
    sign: S,
}

impl<S: Scalar> Lu<S> {
    pub fn factor(a: ArrayView2<S>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("LU needs a square matrix, got {}x{}", n, a.ncols())));
        }
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = S::one();
        let scale = lu.iter().fold(S::zero(), |m, v| m.max(v.abs())).max(S::min_positive_value());
        let tiny = scale * S::epsilon() * S::lit(n.max(1) as f64);
        for k in 0..n {
            let (piv, pval) = (k..n)
                .map(|r| (r, lu[[r, k]].abs()))
                .fold((k, S::lit(-1.0)), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pval <= tiny {
                return Err(Error::Domain(format!("singular matrix (pivot {k} = {pval})")));
            }
            if piv != k {
                for c in 0..n {
                    lu.swap([k, c], [piv, c]);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = lu[[k, k]];
            for r in (k + 1)..n {
                let f = lu[[r, k]] / d;
                lu[[r, k]] = f;
                if f != S::zero() {
                    for c in (k + 1)..n {
                        let v = lu[[k, c]];
                        lu[[r, c]] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn det(&self) -> S {
        self.lu.diag().iter().fold(self.sign, |acc, &d| acc * d)
    }

    pub fn solve(&self, b: ArrayView1<S>) -> Array1<S> {
        let n = self.dim();
        let mut x: Array1<S> = Array1::from_shape_fn(n, |i| b[self.perm[i]]);
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }

    /// Solves one right-hand side per column of `b`.
    pub fn solve_mat(&self, b: ArrayView2<S>) -> Array2<S> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    pub fn inverse(&self) -> Array2<S> {
        self.solve_mat(Array2::eye(self.dim()).view())
    }
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<S> {
    l: Array2<S>,
}

impl<S: Scalar> Cholesky<S> {
    pub fn factor(a: ArrayView2<S>) -> Result<Self> {
        let n = a.nrows();
        let mut l = Array2::<S>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if d <= S::zero() || !d.is_finite() {
                return Err(Error::Domain(format!("matrix not positive definite at column {j}")));
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: ArrayView1<S>) -> Array1<S> {
        let n = self.l.nrows();
        let mut x = b.to_owned();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[[i, k]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }
}

/// Moore–Penrose pseudoinverse of a full-row-rank matrix: `Aᵀ (A Aᵀ)⁻¹`.
pub fn pinv_full_row_rank<S: Scalar>(a: ArrayView2<S>) -> Result<Array2<S>> {
    let (m, n) = a.dim();
    if m == 0 {
        return Ok(Array2::zeros((n, 0)));
    }
    let gram = a.dot(&a.t());
    let lu = Lu::factor(gram.view())?;
    // (A Aᵀ)⁻¹ is symmetric, so Aᵀ (A Aᵀ)⁻¹ = (solve(A Aᵀ, A))ᵀ.
    Ok(lu.solve_mat(a).reversed_axes())
}

/// Chooses `m` linearly independent columns of an `m × n` matrix by Gaussian
/// elimination with complete pivoting, greedily taking the largest remaining
/// entry at each step. Returns the column indices in pivot order, or `None`
/// if the matrix is numerically rank deficient.
pub fn pivoted_basis<S: Scalar>(a: ArrayView2<S>, rel_tol: S) -> Option<Vec<usize>> {
    let (m, n) = a.dim();
    let mut w = a.to_owned();
    let scale = w.iter().fold(S::zero(), |acc, v| acc.max(v.abs()));
    if m == 0 {
        return Some(Vec::new());
    }
    if scale == S::zero() || m > n {
        return None;
    }
    let mut row_used = vec![false; m];
    let mut col_used = vec![false; n];
    let mut basis = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best = (0, 0, S::lit(-1.0));
        for r in (0..m).filter(|&r| !row_used[r]) {
            for c in (0..n).filter(|&c| !col_used[c]) {
                let v = w[[r, c]].abs();
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        let (pr, pc, pv) = best;
        if pv <= rel_tol * scale {
            return None;
        }
        row_used[pr] = true;
        col_used[pc] = true;
        basis.push(pc);
        let piv = w[[pr, pc]];
        for r in (0..m).filter(|&r| !row_used[r]) {
            let f = w[[r, pc]] / piv;
            if f != S::zero() {
                for c in 0..n {
                    let v = w[[pr, c]];
                    w[[r, c]] -= f * v;
                }
            }
        }
    }
    Some(basis)
}

pub fn norm_inf<S: Scalar>(v: ArrayView1<S>) -> S {
    v.iter().fold(S::zero(), |m, x| m.max(x.abs()))
}

pub fn norm2<S: Scalar>(v: ArrayView1<S>) -> S {
    v.iter().map(|&x| x * x).sum::<S>().sqrt()
}

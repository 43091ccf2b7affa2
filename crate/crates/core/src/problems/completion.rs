use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, Lu};
use crate::Scalar;

/// Equality completion `y_F = z`, `y_B = A_B⁻¹ (x − A_F z)` for a fixed
/// partition of the columns of `A` into basic and free sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion<S> {
    n: usize,
    basic: Vec<usize>,
    free: Vec<usize>,
    ab_inv: Array2<S>,
    ab_inv_af: Array2<S>,
}

impl<S: Scalar> Completion<S> {
    /// Picks the basic columns by complete pivoting.
    pub fn new(a: ArrayView2<S>) -> Result<Self> {
        let mut basic = linalg::pivoted_basis(a, S::lit(1e-9))
            .ok_or_else(|| Error::Completion("equality matrix is numerically rank deficient".into()))?;
        basic.sort_unstable();
        Self::with_basis(a, basic)
    }

    pub fn with_basis(a: ArrayView2<S>, basic: Vec<usize>) -> Result<Self> {
        let (m, n) = a.dim();
        if basic.len() != m {
            return Err(shape_err("basic column count", m, basic.len()));
        }
        let mut seen = vec![false; n];
        for &b in &basic {
            if b >= n || std::mem::replace(&mut seen[b], true) {
                return Err(Error::Completion(format!("invalid basic column {b}")));
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| !seen[j]).collect();
        let ab = a.select(Axis(1), &basic);
        let af = a.select(Axis(1), &free);
        let lu = Lu::factor(ab.view()).map_err(|e| Error::Completion(format!("basic submatrix: {e}")))?;
        let ab_inv = lu.inverse();
        let ab_inv_af = ab_inv.dot(&af);
        Ok(Self { n, basic, free, ab_inv, ab_inv_af })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn basic(&self) -> &[usize] {
        &self.basic
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// The free coordinates of a full decision vector.
    pub fn project(&self, y: ArrayView1<S>) -> Array1<S> {
        self.free.iter().map(|&j| y[j]).collect()
    }

    pub fn complete(&self, z: ArrayView1<S>, x: ArrayView1<S>) -> Result<Array1<S>> {
        if z.len() != self.free.len() {
            return Err(shape_err("free variable width", self.free.len(), z.len()));
        }
        if x.len() != self.basic.len() {
            return Err(shape_err("equality right-hand side width", self.basic.len(), x.len()));
        }
        let yb = self.ab_inv.dot(&x) - self.ab_inv_af.dot(&z);
        let mut y = Array1::zeros(self.n);
        for (&j, &v) in self.free.iter().zip(z) {
            y[j] = v;
        }
        for (&j, &v) in self.basic.iter().zip(&yb) {
            y[j] = v;
        }
        Ok(y)
    }

    /// Row-wise completion of a batch.
    pub fn complete_batch(&self, z: ArrayView2<S>, x: ArrayView2<S>) -> Result<Array2<S>> {
        if z.ncols() != self.free.len() {
            return Err(shape_err("free variable width", self.free.len(), z.ncols()));
        }
        if x.ncols() != self.basic.len() || x.nrows() != z.nrows() {
            return Err(Error::Shape(format!(
                "right-hand sides {:?} do not match {} rows of width {}",
                x.dim(),
                z.nrows(),
                self.basic.len()
            )));
        }
        let yb = x.dot(&self.ab_inv.t()) - z.dot(&self.ab_inv_af.t());
        let mut y = Array2::zeros((z.nrows(), self.n));
        for (k, &j) in self.free.iter().enumerate() {
            y.column_mut(j).assign(&z.column(k));
        }
        for (k, &j) in self.basic.iter().enumerate() {
            y.column_mut(j).assign(&yb.column(k));
        }
        Ok(y)
    }

    /// Pulls a gradient with respect to `y` back to the free variables.
    pub fn pullback(&self, grad_y: ArrayView1<S>) -> Array1<S> {
        let gb: Array1<S> = self.basic.iter().map(|&j| grad_y[j]).collect();
        let mut gz: Array1<S> = self.free.iter().map(|&j| grad_y[j]).collect();
        gz -= &self.ab_inv_af.t().dot(&gb);
        gz
    }

    pub fn pullback_batch(&self, grad_y: ArrayView2<S>) -> Array2<S> {
        let gb = grad_y.select(Axis(1), &self.basic);
        let gf = grad_y.select(Axis(1), &self.free);
        gf - gb.dot(&self.ab_inv_af)
    }
}

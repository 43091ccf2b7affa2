//! Reference solvers that produce instance labels.

mod grid;
mod nonconvex;
mod qp;

use ndarray::ArrayView1;

pub use grid::{feasible_box, grid_search_2d, search_frame, GridBox, GridFrame, GridSettings};
pub use nonconvex::{solve_nonconvex, NonconvexSettings};
pub use qp::{solve_qp, solve_qp_with, KktResiduals, OracleSolution, QpSettings};

use crate::error::Result;
use crate::problems::{Instance, Label, ProblemFamily};
use crate::Scalar;

/// Residual bound every emitted label satisfies.
pub const LABEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleSettings {
    pub qp: QpSettings,
    pub nonconvex: NonconvexSettings,
}

/// Convex families go to the QP solver, everything else to the multi-start
/// local solver.
pub fn solve<S: Scalar>(fam: &ProblemFamily<S>, x: ArrayView1<S>, settings: &OracleSettings) -> Result<OracleSolution<S>> {
    let tol = S::lit(LABEL_TOL);
    if fam.is_convex() {
        solve_qp_with(fam, x, tol, &settings.qp)
    } else {
        solve_nonconvex(fam, x, &settings.nonconvex, tol)
    }
}

/// Solves and attaches a label, verifying the label invariants.
pub fn label_instance<S: Scalar>(fam: &ProblemFamily<S>, inst: &mut Instance<S>, settings: &OracleSettings) -> Result<()> {
    let sol = solve(fam, inst.x.view(), settings)?;
    inst.label = Some(Label { y: sol.y, f: sol.f });
    inst.check_label(fam, S::lit(LABEL_TOL))
}

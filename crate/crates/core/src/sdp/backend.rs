//! Conic-solver backend: translates an [`LmiProblem`](super::LmiProblem)
//! into Clarabel's standard form `min q'v  s.t.  Av + s = b, s ∈ K` with
//! nonnegative and PSD-triangle cones, and maps statuses back.

use super::{LmiProblem, SolveOutcome, SolveSettings, SolveStatus};
use crate::error::{Error, Result};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

/// Upper-triangle column-major scaled vectorization used by the PSD cone:
/// off-diagonal entries carry a factor sqrt(2).
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { sqrt2 * m[(i, j)] });
        }
    }
    out
}

struct TripletBuilder {
    nrows: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl TripletBuilder {
    fn new(ncols: usize) -> Self {
        TripletBuilder { nrows: 0, cols: vec![Vec::new(); ncols] }
    }

    fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.cols[col].push((row, val));
        }
    }

    fn finish(mut self, nrows: usize) -> CscMatrix<f64> {
        self.nrows = nrows;
        let mut colptr = Vec::with_capacity(self.cols.len() + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &mut self.cols {
            col.sort_by_key(|(r, _)| *r);
            for (r, v) in col.iter() {
                rowval.push(*r);
                nzval.push(*v);
            }
            colptr.push(rowval.len());
        }
        CscMatrix::new(self.nrows, self.cols.len(), colptr, rowval, nzval)
    }
}

pub(super) fn solve(problem: &LmiProblem, settings: &SolveSettings) -> Result<SolveOutcome> {
    let n = problem.n_scalars();
    let t_col = n; // extra margin variable
    let n_vars = n + 1;

    let mut a = TripletBuilder::new(n_vars);
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut row = 0;

    // nonnegative block: linear constraints, then 0 <= t <= cap
    let n_nonneg = problem.linear().len() + 2;
    for c in problem.linear() {
        b.push(c.constant - c.margin);
        for (k, v) in &c.coeffs {
            a.push(row, *k, -v);
        }
        row += 1;
    }
    b.push(0.0);
    a.push(row, t_col, -1.0);
    row += 1;
    b.push(settings.margin_cap);
    a.push(row, t_col, 1.0);
    row += 1;
    cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));

    // PSD blocks: svec(-F0 - margin I - sum x_k F_k - t I) ⪰ 0
    for c in problem.lmis() {
        if c.size == 0 {
            continue;
        }
        let eye = DMatrix::<f64>::identity(c.size, c.size);
        let b_block = svec(&(-&c.f0 - &eye * c.margin));
        let t_block = svec(&eye);
        let tri = b_block.len();
        for (i, v) in b_block.iter().enumerate() {
            b.push(*v);
            let _ = i;
        }
        for (k, m) in &c.coeffs {
            for (i, v) in svec(m).iter().enumerate() {
                a.push(row + i, *k, *v);
            }
        }
        for (i, v) in t_block.iter().enumerate() {
            a.push(row + i, t_col, *v);
        }
        row += tri;
        cones.push(SupportedConeT::PSDTriangleConeT(c.size));
    }

    let a = a.finish(row);
    let p = CscMatrix::<f64>::zeros((n_vars, n_vars));
    let mut q = vec![0.0; n_vars];
    q[t_col] = -1.0;

    let mut clarabel_settings = DefaultSettings::default();
    clarabel_settings.verbose = settings.verbose;
    clarabel_settings.max_iter = settings.max_iter;

    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, clarabel_settings)
        .map_err(|e| Error::SolverFailure(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let assignment: Vec<f64> = sol.x[..n].to_vec();
            Ok(SolveOutcome {
                status: SolveStatus::Feasible,
                achieved_margin: sol.x[t_col],
                assignment: Some(assignment),
                iterations: sol.iterations,
                solve_time: sol.solve_time,
                reduced_accuracy: sol.status == SolverStatus::AlmostSolved,
            })
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            verify_infeasibility_certificate(&a, &b, &sol.z)?;
            Ok(SolveOutcome {
                status: SolveStatus::Infeasible,
                achieved_margin: 0.0,
                assignment: None,
                iterations: sol.iterations,
                solve_time: sol.solve_time,
                reduced_accuracy: sol.status == SolverStatus::AlmostPrimalInfeasible,
            })
        }
        other => Err(Error::SolverFailure(format!("solver terminated with status {other:?}"))),
    }
}

/// A primal infeasibility certificate `z` must satisfy `A'z ≈ 0`, `b'z < 0`
/// and lie in the dual cone. The cone membership is the solver's job; the
/// two residuals are re-checked here before an infeasible verdict is
/// accepted.
fn verify_infeasibility_certificate(a: &CscMatrix<f64>, b: &[f64], z: &[f64]) -> Result<()> {
    let z_max = z.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if z_max == 0.0 || !z_max.is_finite() {
        return Err(Error::SolverFailure(
            "infeasibility certificate is zero or non-finite".into(),
        ));
    }
    // A'z column by column
    let mut at_z_max = 0.0_f64;
    let mut a_max = 0.0_f64;
    for col in 0..a.n {
        let mut acc = 0.0;
        for idx in a.colptr[col]..a.colptr[col + 1] {
            acc += a.nzval[idx] * z[a.rowval[idx]];
            a_max = a_max.max(a.nzval[idx].abs());
        }
        at_z_max = at_z_max.max(acc.abs());
    }
    let btz: f64 = b.iter().zip(z.iter()).map(|(bi, zi)| bi * zi).sum();
    let r_rel = at_z_max / (z_max * (1.0 + a_max));
    let v_rel = -btz / z_max;
    if r_rel <= 1e-6 && v_rel > 1e-12 {
        Ok(())
    } else {
        Err(Error::SolverFailure(format!(
            "infeasibility certificate failed residual check (A'z rel {r_rel:.3e}, b'z rel {:.3e})",
            -v_rel
        )))
    }
}

//! Affine LMI modeling and the feasibility front-end over a conic solver
//! with semidefinite cone support. Nothing outside this module talks to the
//! solver.
//!
//! Problems collect symmetric/row/scalar/full variable blocks, matrix
//! inequalities `F(x) ⪯ -margin I` (affine in the scalar decision vector)
//! and elementwise linear inequalities. Feasibility is posed with a
//! margin-maximization objective so that returned points are well centered;
//! `replay` re-evaluates every constraint by eigenvalue computations and is
//! the source of truth for verdicts.

mod backend;
mod expr;

pub use expr::MatExpr;

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    Symmetric { size: usize },
    Row { len: usize },
    Full { rows: usize, cols: usize },
    Scalar,
}

impl VarKind {
    fn scalar_count(&self) -> usize {
        match self {
            VarKind::Symmetric { size } => size * (size + 1) / 2,
            VarKind::Row { len } => *len,
            VarKind::Full { rows, cols } => rows * cols,
            VarKind::Scalar => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Handle to a variable block of an [`LmiProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarRef(usize);

#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub size: usize,
    /// Constant part `F0` of `F(x) = F0 + sum x_k F_k`.
    pub f0: DMatrix<f64>,
    /// Coefficient matrices per scalar variable.
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
    /// Required margin: the constraint is `F(x) ⪯ -margin I`.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub name: String,
    pub constant: f64,
    pub coeffs: Vec<(usize, f64)>,
    /// Required margin: the constraint is `constant + a·x >= margin`.
    pub margin: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    blocks: Vec<VarBlock>,
    n_scalars: usize,
    lmis: Vec<LmiConstraint>,
    linear: Vec<LinearConstraint>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }
    pub fn lmis(&self) -> &[LmiConstraint] {
        &self.lmis
    }
    pub fn linear(&self) -> &[LinearConstraint] {
        &self.linear
    }
    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    fn add_block(&mut self, name: &str, kind: VarKind) -> VarRef {
        let offset = self.n_scalars;
        self.n_scalars += kind.scalar_count();
        self.blocks.push(VarBlock { name: name.to_string(), kind, offset });
        VarRef(self.blocks.len() - 1)
    }

    pub fn sym_var(&mut self, name: &str, size: usize) -> VarRef {
        self.add_block(name, VarKind::Symmetric { size })
    }

    pub fn row_var(&mut self, name: &str, len: usize) -> VarRef {
        self.add_block(name, VarKind::Row { len })
    }

    pub fn full_var(&mut self, name: &str, rows: usize, cols: usize) -> VarRef {
        self.add_block(name, VarKind::Full { rows, cols })
    }

    pub fn scalar_var(&mut self, name: &str) -> VarRef {
        self.add_block(name, VarKind::Scalar)
    }

    /// The matrix expression representing a variable block.
    pub fn expr(&self, var: VarRef) -> MatExpr {
        let block = &self.blocks[var.0];
        let off = block.offset;
        match block.kind {
            VarKind::Symmetric { size } => {
                let mut terms = BTreeMap::new();
                let mut k = off;
                for i in 0..size {
                    for j in i..size {
                        let mut coeff = DMatrix::zeros(size, size);
                        coeff[(i, j)] = 1.0;
                        coeff[(j, i)] = 1.0;
                        terms.insert(k, coeff);
                        k += 1;
                    }
                }
                MatExpr::from_terms(size, size, DMatrix::zeros(size, size), terms)
            }
            VarKind::Row { len } => {
                let mut terms = BTreeMap::new();
                for j in 0..len {
                    let mut coeff = DMatrix::zeros(1, len);
                    coeff[(0, j)] = 1.0;
                    terms.insert(off + j, coeff);
                }
                MatExpr::from_terms(1, len, DMatrix::zeros(1, len), terms)
            }
            VarKind::Full { rows, cols } => {
                let mut terms = BTreeMap::new();
                let mut k = off;
                for j in 0..cols {
                    for i in 0..rows {
                        let mut coeff = DMatrix::zeros(rows, cols);
                        coeff[(i, j)] = 1.0;
                        terms.insert(k, coeff);
                        k += 1;
                    }
                }
                MatExpr::from_terms(rows, cols, DMatrix::zeros(rows, cols), terms)
            }
            VarKind::Scalar => {
                let mut terms = BTreeMap::new();
                terms.insert(off, DMatrix::from_element(1, 1, 1.0));
                MatExpr::from_terms(1, 1, DMatrix::zeros(1, 1), terms)
            }
        }
    }

    /// Reconstructs the matrix value of a block from a scalar assignment.
    pub fn value_of(&self, var: VarRef, assignment: &[f64]) -> DMatrix<f64> {
        self.expr(var).eval(assignment)
    }

    /// Adds `expr ⪯ -margin I`. Every coefficient matrix is symmetrized;
    /// asymmetry beyond `1e-12` (relative) is rejected.
    pub fn require_neg_def(&mut self, name: &str, expr: &MatExpr, margin: f64) -> Result<()> {
        if expr.rows() != expr.cols() {
            return Err(Error::DimensionMismatch(format!(
                "LMI '{name}' must be square, got {}x{}",
                expr.rows(),
                expr.cols()
            )));
        }
        let symmetrize = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "constraint '{name}' assembled an asymmetric matrix (defect {asym:.3e})"
                )));
            }
            Ok((m + m.transpose()) * 0.5)
        };
        let f0 = symmetrize(expr.constant_part())?;
        let mut coeffs = Vec::with_capacity(expr.terms().len());
        for (k, t) in expr.terms() {
            let s = symmetrize(t)?;
            if s.amax() > 0.0 {
                coeffs.push((*k, s));
            }
        }
        self.lmis.push(LmiConstraint { name: name.to_string(), size: expr.rows(), f0, coeffs, margin });
        Ok(())
    }

    /// Adds `expr ⪰ margin I`.
    pub fn require_pos_def(&mut self, name: &str, expr: &MatExpr, margin: f64) -> Result<()> {
        self.require_neg_def(name, &expr.scale(-1.0), margin)
    }

    /// Adds `entry >= margin` for every entry of a (row) expression.
    pub fn require_ge_entrywise(&mut self, name: &str, expr: &MatExpr, margin: f64) {
        for i in 0..expr.rows() {
            for j in 0..expr.cols() {
                let mut coeffs = Vec::new();
                for (k, t) in expr.terms() {
                    if t[(i, j)] != 0.0 {
                        coeffs.push((*k, t[(i, j)]));
                    }
                }
                self.linear.push(LinearConstraint {
                    name: format!("{name}[{i},{j}]"),
                    constant: expr.constant_part()[(i, j)],
                    coeffs,
                    margin,
                });
            }
        }
    }

    /// Adds `entry <= -margin` for every entry of a (row) expression.
    pub fn require_le_entrywise(&mut self, name: &str, expr: &MatExpr, margin: f64) {
        self.require_ge_entrywise(name, &expr.scale(-1.0), margin);
    }

    /// Serializable debugging dump: variables plus constraint tensors in
    /// sparse triplet form.
    pub fn dump(&self) -> ProblemDump {
        let triplets = |m: &DMatrix<f64>| -> Vec<(usize, usize, f64)> {
            let mut out = Vec::new();
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    if m[(i, j)] != 0.0 {
                        out.push((i, j, m[(i, j)]));
                    }
                }
            }
            out
        };
        ProblemDump {
            variables: self.blocks.clone(),
            lmis: self
                .lmis
                .iter()
                .map(|c| LmiDump {
                    name: c.name.clone(),
                    size: c.size,
                    margin: c.margin,
                    f0: triplets(&c.f0),
                    coeffs: c.coeffs.iter().map(|(k, m)| (*k, triplets(m))).collect(),
                })
                .collect(),
            linear: self
                .linear
                .iter()
                .map(|c| LinearDump {
                    name: c.name.clone(),
                    constant: c.constant,
                    margin: c.margin,
                    coeffs: c.coeffs.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LmiDump {
    pub name: String,
    pub size: usize,
    pub margin: f64,
    pub f0: Vec<(usize, usize, f64)>,
    pub coeffs: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearDump {
    pub name: String,
    pub constant: f64,
    pub margin: f64,
    pub coeffs: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemDump {
    pub variables: Vec<VarBlock>,
    pub lmis: Vec<LmiDump>,
    pub linear: Vec<LinearDump>,
}

/// Verdict of a feasibility solve.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Scalar assignment on feasibility, `None` on infeasibility.
    pub assignment: Option<Vec<f64>>,
    /// The maximized common LMI margin `t` (slack beyond the per-constraint
    /// required margins), when feasible.
    pub achieved_margin: f64,
    pub iterations: u32,
    pub solve_time: f64,
    /// True when the solver only reached reduced accuracy.
    pub reduced_accuracy: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveSettings {
    pub verbose: bool,
    pub max_iter: u32,
    /// Upper bound on the margin variable; keeps feasibility problems bounded.
    pub margin_cap: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings { verbose: false, max_iter: 200, margin_cap: 1e9 }
    }
}

/// Solves the feasibility problem by maximizing a common extra margin `t >= 0`
/// over all matrix inequalities. Infeasibility is only reported when the
/// solver's certificate passes a residual check; anything else surfaces as a
/// solver failure.
pub fn solve_feasibility(problem: &LmiProblem, settings: &SolveSettings) -> Result<SolveOutcome> {
    backend::solve(problem, settings)
}

/// Exact margins of each constraint at an assignment, independent of the
/// solver: for an LMI the achieved margin is `-lambda_max(F(x))`, for a
/// linear inequality it is `constant + a·x`.
#[derive(Debug, Clone)]
pub struct MarginReport {
    /// `(name, achieved, required)` per matrix inequality.
    pub lmi: Vec<(String, f64, f64)>,
    /// `(name, achieved, required)` per linear inequality.
    pub linear: Vec<(String, f64, f64)>,
}

impl MarginReport {
    /// Smallest slack `achieved - required` over all constraints.
    pub fn min_slack(&self) -> f64 {
        self.lmi
            .iter()
            .chain(self.linear.iter())
            .map(|(_, a, r)| a - r)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn all_met(&self, tolerance: f64) -> bool {
        self.min_slack() >= -tolerance
    }
}

pub fn replay(problem: &LmiProblem, assignment: &[f64]) -> Result<MarginReport> {
    if assignment.len() < problem.n_scalars {
        return Err(Error::InvalidInput(format!(
            "assignment covers {} scalars, problem has {}",
            assignment.len(),
            problem.n_scalars
        )));
    }
    let mut lmi = Vec::with_capacity(problem.lmis.len());
    for c in &problem.lmis {
        let mut f = c.f0.clone();
        for (k, m) in &c.coeffs {
            f += m * assignment[*k];
        }
        let max_eig = if c.size == 0 {
            f64::NEG_INFINITY
        } else {
            f.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        lmi.push((c.name.clone(), -max_eig, c.margin));
    }
    let mut linear = Vec::with_capacity(problem.linear.len());
    for c in &problem.linear {
        let v = c.constant + c.coeffs.iter().map(|(k, a)| a * assignment[*k]).sum::<f64>();
        linear.push((c.name.clone(), v, c.margin));
    }
    Ok(MarginReport { lmi, linear })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_feasible_box() {
        // X ⪰ I and -X ⪰ -2I for a 1x1 X
        let mut p = LmiProblem::new();
        let x = p.sym_var("X", 1);
        let xe = p.expr(x);
        p.require_pos_def("lower", &xe.sub(&MatExpr::constant(DMatrix::identity(1, 1))), 0.0)
            .unwrap();
        p.require_neg_def("upper", &xe.sub(&MatExpr::constant(DMatrix::identity(1, 1) * 2.0)), 0.0)
            .unwrap();
        let out = solve_feasibility(&p, &SolveSettings::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        let a = out.assignment.unwrap();
        let xv = p.value_of(x, &a)[(0, 0)];
        assert!((1.0..=2.0).contains(&xv), "X = {xv}");
        let report = replay(&p, &a).unwrap();
        assert!(report.all_met(1e-9));
    }

    #[test]
    fn trivial_infeasible_pair() {
        // X ⪰ I and X ⪯ 0
        let mut p = LmiProblem::new();
        let x = p.sym_var("X", 1);
        let xe = p.expr(x);
        p.require_pos_def("lower", &xe.sub(&MatExpr::constant(DMatrix::identity(1, 1))), 0.0)
            .unwrap();
        p.require_neg_def("upper", &xe, 0.0).unwrap();
        let out = solve_feasibility(&p, &SolveSettings::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn off_diagonal_svec_scaling_is_consistent() {
        // [x, 1; 1, x] ⪰ 0 forces x >= 1; maximizing the margin pushes x up,
        // bounded by x <= 3.
        let mut p = LmiProblem::new();
        let x = p.scalar_var("x");
        let xe = p.expr(x);
        let m = MatExpr::block(&[
            vec![&xe, &MatExpr::constant(DMatrix::identity(1, 1))],
            vec![&MatExpr::constant(DMatrix::identity(1, 1)), &xe],
        ]);
        p.require_pos_def("psd", &m, 0.0).unwrap();
        p.require_ge_entrywise("cap", &xe.scale(-1.0), -3.0);
        let out = solve_feasibility(&p, &SolveSettings::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        let a = out.assignment.unwrap();
        let xv = a[0];
        assert!(xv >= 1.0 - 1e-7 && xv <= 3.0 + 1e-7, "x = {xv}");
        // replay margin of the psd constraint is min eigenvalue = x - 1
        let rep = replay(&p, &a).unwrap();
        let got = rep.lmi[0].1;
        assert!((got - (xv - 1.0)).abs() <= 1e-8, "margin {got} vs {}", xv - 1.0);
    }

    #[test]
    fn asymmetric_constraint_rejected() {
        let mut p = LmiProblem::new();
        let m = MatExpr::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(p.require_neg_def("bad", &m, 0.0).is_err());
    }

    #[test]
    fn replay_flags_perturbed_assignment() {
        let mut p = LmiProblem::new();
        let x = p.sym_var("X", 1);
        let xe = p.expr(x);
        p.require_pos_def("lower", &xe.sub(&MatExpr::constant(DMatrix::identity(1, 1))), 0.0)
            .unwrap();
        let good = vec![1.5];
        assert!(replay(&p, &good).unwrap().all_met(0.0));
        let bad = vec![1.0 - 1e-3];
        let rep = replay(&p, &bad).unwrap();
        assert!(rep.min_slack() < 0.0);
        assert!((rep.min_slack() + 1e-3).abs() < 1e-12);
    }

    #[test]
    fn missing_assignment_is_an_error() {
        let mut p = LmiProblem::new();
        let _ = p.sym_var("X", 2);
        assert!(replay(&p, &[1.0]).is_err());
    }

    #[test]
    fn dump_round_trips_to_json() {
        let mut p = LmiProblem::new();
        let x = p.sym_var("X", 2);
        let xe = p.expr(x);
        p.require_pos_def("psd", &xe, 1e-7).unwrap();
        let dump = p.dump();
        let s = serde_json::to_string(&dump).unwrap();
        assert!(s.contains("\"psd\""));
        assert!(s.contains("\"variables\""));
    }
}

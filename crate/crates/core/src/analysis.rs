//! Rate certification for a fixed algorithm: assemble the multiplier-filtered
//! series system, pose the stability LMI together with the linear filter
//! constraints, solve the resulting semidefinite feasibility problem, and
//! bisect for the best certifiable rate.

use crate::error::{Error, Result};
use crate::multiplier::{
    MultiplierParams, MultiplierParamsJson, MultiplierStructure, SectorBounds,
};
use crate::sdp::{
    replay, solve_feasibility, LmiProblem, MatExpr, SolveSettings, SolveStatus, VarRef,
};
use crate::sskit::{Algorithm, MatrixJson};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// The series interconnection of the sector-filtered, rate-scaled algorithm
/// with the multiplier filter. `Acal`/`Bcal` are fixed; the output row and
/// feedthrough depend affinely on the filter coefficients `(C_f, D_f)`.
#[derive(Debug, Clone)]
pub struct AnalysisSystem {
    acal: DMatrix<f64>,
    bcal: DMatrix<f64>,
    /// `(L - m) C_a`, the constant row multiplied by `D_f` in the output.
    scaled_output_row: DMatrix<f64>,
    filter_order: usize,
    algo_order: usize,
    rho: f64,
}

impl AnalysisSystem {
    pub fn acal(&self) -> &DMatrix<f64> {
        &self.acal
    }
    pub fn bcal(&self) -> &DMatrix<f64> {
        &self.bcal
    }
    pub fn dim(&self) -> usize {
        self.filter_order + self.algo_order
    }
    pub fn filter_order(&self) -> usize {
        self.filter_order
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The output row `[C_f, D_f (L-m) C_a]` at fixed parameters.
    pub fn ccal_at(&self, params: &MultiplierParams) -> DMatrix<f64> {
        let l = self.filter_order;
        let mut row = DMatrix::zeros(1, self.dim());
        row.view_mut((0, 0), (1, l)).copy_from(params.c_f());
        row.view_mut((0, l), (1, self.algo_order))
            .copy_from(&(&self.scaled_output_row * params.d_f()));
        row
    }

    /// The feedthrough `-D_f` at fixed parameters.
    pub fn dcal_at(&self, params: &MultiplierParams) -> f64 {
        -params.d_f()
    }

    /// Output row as an affine expression in the decision variables.
    fn ccal_expr(&self, cf: Option<&MatExpr>, df: &MatExpr) -> MatExpr {
        let tail = df.mul(&MatExpr::constant(self.scaled_output_row.clone()));
        match cf {
            Some(cf) => MatExpr::hstack(&[cf, &tail]),
            None => tail,
        }
    }

    fn dcal_expr(&self, df: &MatExpr) -> MatExpr {
        df.scale(-1.0)
    }
}

/// Assembles the analysis realization at rate `rho`:
/// `Acal = [[A_f, B_f (L-m) C_a], [0, rho^{-1}(A_a + B_a m C_a)]]`,
/// `Bcal = [-B_f; rho^{-1} B_a]`, output `[C_f, D_f (L-m) C_a]`,
/// feedthrough `-D_f`. For order 0 the filter blocks are absent.
pub fn build_analysis_system(
    algo: &Algorithm,
    sector: &SectorBounds,
    rho: f64,
    structure: &MultiplierStructure,
) -> Result<AnalysisSystem> {
    structure.admissible_at(rho)?;
    let l = structure.order();
    let na = algo.order();
    let dim = l + na;

    let a_loop = (algo.a() + algo.b() * algo.c() * sector.m()) / rho;
    let b_loop = algo.b() / rho;
    let out_row = algo.c() * sector.width();

    let mut acal = DMatrix::zeros(dim, dim);
    acal.view_mut((0, 0), (l, l)).copy_from(structure.a_f());
    acal.view_mut((0, l), (l, na)).copy_from(&(structure.b_f() * &out_row));
    acal.view_mut((l, l), (na, na)).copy_from(&a_loop);
    let mut bcal = DMatrix::zeros(dim, 1);
    bcal.view_mut((0, 0), (l, 1)).copy_from(&(-structure.b_f()));
    bcal.view_mut((l, 0), (na, 1)).copy_from(&b_loop);

    Ok(AnalysisSystem {
        acal,
        bcal,
        scaled_output_row: out_row,
        filter_order: l,
        algo_order: na,
        rho,
    })
}

/// Decision-variable handles of an assembled analysis LMI problem.
pub struct AnalysisLmi {
    pub problem: LmiProblem,
    pub x: VarRef,
    /// Present only for filter order >= 1; otherwise `D_f` is pinned to 1.
    pub cf: Option<VarRef>,
    pub df: Option<VarRef>,
    pub epsilon: f64,
}

/// Upper bound on `trace(X)` used to normalize the homogeneous problem when
/// the filter coefficients are free.
const TRACE_CAP: f64 = 1e8;

/// Poses the certification LMIs: `X ⪰ eps I`, the quadratic-form inequality
/// of the filtered loop `⪯ -eps I`, and the linear constraints on the filter
/// coefficients. Everything is affine in `(X, C_f, D_f)`.
pub fn analysis_lmi(sys: &AnalysisSystem, structure: &MultiplierStructure) -> Result<AnalysisLmi> {
    let mut problem = LmiProblem::new();
    let dim = sys.dim();
    let l = sys.filter_order();
    let epsilon = 1e-7 * (1.0 + sys.acal().norm());

    let x = problem.sym_var("X", dim);
    let (cf, df) = if l > 0 {
        (Some(problem.row_var("Cf", l)), Some(problem.scalar_var("Df")))
    } else {
        (None, None)
    };

    let xe = problem.expr(x);
    let cf_expr = cf.map(|r| problem.expr(r));
    let df_expr = df
        .map(|r| problem.expr(r))
        .unwrap_or_else(|| MatExpr::constant(DMatrix::from_element(1, 1, 1.0)));

    // X ⪰ eps I
    problem.require_pos_def("X_pd", &xe, epsilon)?;

    // [[A'XA - X, A'XB + C'], [B'XA + C, B'XB + D + D']] ⪯ -eps I
    let ccal = sys.ccal_expr(cf_expr.as_ref(), &df_expr);
    let dcal = sys.dcal_expr(&df_expr);
    let quad_aa = xe.congruence(sys.acal()).sub(&xe);
    let quad_ab = xe.lmul(&sys.acal().transpose()).rmul(sys.bcal()).add(&ccal.transpose());
    let quad_bb = xe.congruence(sys.bcal()).add(&dcal).add(&dcal.transpose());
    let lmi = MatExpr::block(&[vec![&quad_aa, &quad_ab], vec![&quad_ab.transpose(), &quad_bb]]);
    problem.require_neg_def("loop_lmi", &lmi, epsilon)?;

    if let Some(cf_e) = &cf_expr {
        crate::multiplier::add_filter_constraints(&mut problem, structure, cf_e, &df_expr, sys.rho())?;
        // normalization of the otherwise homogeneous problem
        problem.require_le_entrywise("trace_cap", &trace_expr(&xe, dim), -TRACE_CAP);
    }

    Ok(AnalysisLmi { problem, x, cf, df, epsilon })
}

/// `trace(M)` of a square expression as a 1x1 expression.
pub(crate) fn trace_expr(m: &MatExpr, dim: usize) -> MatExpr {
    let mut acc = MatExpr::zeros(1, 1);
    for i in 0..dim {
        let mut e_i = DMatrix::zeros(dim, 1);
        e_i[(i, 0)] = 1.0;
        acc = acc.add(&m.congruence(&e_i));
    }
    acc
}

/// A feasible point of the certification LMIs: proof of exponential
/// convergence at rate `rho` for the whole function class.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub rho: f64,
    pub x: DMatrix<f64>,
    pub params: MultiplierParams,
    pub lmi_margin: f64,
}

impl Certificate {
    /// The Lyapunov-threshold constant `k_+ / k_-` (condition number of `X`),
    /// reported for the base dimension d = 1.
    pub fn condition_constant(&self) -> f64 {
        let eig = self.x.clone().symmetric_eigen().eigenvalues;
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    /// Re-evaluates the certification inequality and returns the achieved
    /// margin `-lambda_max` (positive means the certificate holds).
    pub fn replay_margin(
        &self,
        algo: &Algorithm,
        sector: &SectorBounds,
        structure: &MultiplierStructure,
    ) -> Result<f64> {
        let sys = build_analysis_system(algo, sector, self.rho, structure)?;
        let ccal = sys.ccal_at(&self.params);
        let dcal = sys.dcal_at(&self.params);
        let dim = sys.dim();
        let mut m = DMatrix::zeros(dim + 1, dim + 1);
        let axa = sys.acal().transpose() * &self.x * sys.acal() - &self.x;
        let axb = sys.acal().transpose() * &self.x * sys.bcal() + ccal.transpose();
        let bxb = (sys.bcal().transpose() * &self.x * sys.bcal())[(0, 0)] + 2.0 * dcal;
        m.view_mut((0, 0), (dim, dim)).copy_from(&axa);
        m.view_mut((0, dim), (dim, 1)).copy_from(&axb);
        m.view_mut((dim, 0), (1, dim)).copy_from(&axb.transpose());
        m[(dim, dim)] = bxb;
        let max_eig = m.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(-max_eig)
    }

    pub fn to_json(&self, structure: &MultiplierStructure) -> CertificateJson {
        CertificateJson {
            rho: self.rho,
            x: MatrixJson::from_matrix(&self.x),
            params: MultiplierParamsJson::from_params(&self.params),
            margin: self.lmi_margin,
            structure: StructureJson::from_structure(structure),
        }
    }
}

/// Wire format of the filter structure inside certificates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureJson {
    pub l: usize,
    pub z0: Option<f64>,
    /// Full monic coefficient list of `alpha`, low order first.
    pub alpha: Vec<f64>,
}

impl StructureJson {
    pub fn from_structure(s: &MultiplierStructure) -> Self {
        StructureJson { l: s.order(), z0: s.z0(), alpha: s.alpha().to_vec() }
    }

    pub fn to_structure(&self) -> Result<MultiplierStructure> {
        match self.z0 {
            Some(z0) if crate::multiplier::default_structure(self.l, z0)
                .map(|s| s.alpha() == self.alpha.as_slice())
                .unwrap_or(false) =>
            {
                crate::multiplier::default_structure(self.l, z0)
            }
            _ => MultiplierStructure::from_alpha(self.alpha.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateJson {
    pub rho: f64,
    #[serde(rename = "X")]
    pub x: MatrixJson,
    #[serde(flatten)]
    pub params: MultiplierParamsJson,
    pub margin: f64,
    pub structure: StructureJson,
}

impl CertificateJson {
    pub fn to_certificate(&self) -> Result<Certificate> {
        Ok(Certificate {
            rho: self.rho,
            x: self.x.to_matrix()?,
            params: self.params.to_params()?,
            lmi_margin: self.margin,
        })
    }
}

/// Outcome of a single-rate certification attempt. Numerical failures are
/// surfaced as errors, never folded into `Infeasible`.
#[derive(Debug, Clone)]
pub enum CertifyOutcome {
    Feasible(Certificate),
    Infeasible,
}

impl CertifyOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, CertifyOutcome::Feasible(_))
    }
}

/// Attempts to certify rate `rho` for `algo` over the sector class.
pub fn certify_rate(
    algo: &Algorithm,
    sector: &SectorBounds,
    rho: f64,
    structure: &MultiplierStructure,
) -> Result<CertifyOutcome> {
    let sys = build_analysis_system(algo, sector, rho, structure)?;
    let lmi = analysis_lmi(&sys, structure)?;
    let outcome = solve_feasibility(&lmi.problem, &SolveSettings::default())?;
    match outcome.status {
        SolveStatus::Infeasible => Ok(CertifyOutcome::Infeasible),
        SolveStatus::Feasible => {
            let assignment = outcome.assignment.expect("feasible outcome has assignment");
            let report = replay(&lmi.problem, &assignment)?;
            if !report.all_met(1e-9) {
                return Err(Error::SolverFailure(format!(
                    "solver reported feasible but replay slack is {:.3e}",
                    report.min_slack()
                )));
            }
            let x = lmi.problem.value_of(lmi.x, &assignment);
            let params = match (lmi.cf, lmi.df) {
                (Some(cf), Some(df)) => MultiplierParams::new(
                    lmi.problem.value_of(cf, &assignment),
                    lmi.problem.value_of(df, &assignment)[(0, 0)],
                )?,
                _ => MultiplierParams::r#static(1.0),
            };
            let cert = Certificate { rho, x, params, lmi_margin: 0.0 };
            let margin = cert.replay_margin(algo, sector, structure)?;
            if margin < lmi.epsilon * 0.5 {
                return Err(Error::SolverFailure(format!(
                    "certificate replay margin {margin:.3e} below eps/2 = {:.3e}",
                    lmi.epsilon * 0.5
                )));
            }
            Ok(CertifyOutcome::Feasible(Certificate { lmi_margin: margin, ..cert }))
        }
    }
}

/// Result of the bisection for the best certifiable rate.
#[derive(Debug, Clone)]
pub struct BestRate {
    /// Smallest rate that was certified (within `tol` of the infimum,
    /// assuming feasibility is monotone in the rate).
    pub rho_star: f64,
    pub certificate: Certificate,
    /// Rates probed during bisection with their verdicts.
    pub probes: Vec<(f64, bool)>,
    /// Result of the post-hoc monotonicity spot check at a rate above the
    /// threshold; `false` flags a violation of the bisection premise.
    pub monotone_spot_check: bool,
}

/// Bisects for the smallest rate at which [`certify_rate`] is feasible.
/// Requires feasibility at `rho = 1`; the lower bracket is the largest filter
/// pole modulus.
pub fn best_rate(
    algo: &Algorithm,
    sector: &SectorBounds,
    structure: &MultiplierStructure,
    tol: f64,
) -> Result<BestRate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    let mut probes = Vec::new();
    let top = certify_rate(algo, sector, 1.0, structure)?;
    probes.push((1.0, top.is_feasible()));
    let mut best = match top {
        CertifyOutcome::Feasible(c) => c,
        CertifyOutcome::Infeasible => return Err(Error::NotCertifiable),
    };
    let mut lo = structure.max_root_modulus();
    let mut hi = 1.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match certify_rate(algo, sector, mid, structure)? {
            CertifyOutcome::Feasible(c) => {
                probes.push((mid, true));
                best = c;
                hi = mid;
            }
            CertifyOutcome::Infeasible => {
                probes.push((mid, false));
                lo = mid;
            }
        }
    }
    // spot check monotonicity at a rate clearly above the found threshold
    let check_rho = 0.5 * (hi + 1.0);
    let monotone_spot_check = if check_rho > hi + 1e-12 {
        certify_rate(algo, sector, check_rho, structure)?.is_feasible()
    } else {
        true
    };
    Ok(BestRate { rho_star: hi, certificate: best, probes, monotone_spot_check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::default_structure;
    use approx::assert_relative_eq;

    fn gd_instance() -> (Algorithm, SectorBounds) {
        (Algorithm::gradient_descent(2.0 / 11.0), SectorBounds::new(1.0, 10.0).unwrap())
    }

    #[test]
    fn analysis_system_matches_hand_arithmetic() {
        // gradient descent (1, -2/11, 1), m=1, L=10, rho=0.85, l=0
        let (algo, sector) = gd_instance();
        let s0 = default_structure(0, 0.0).unwrap();
        let sys = build_analysis_system(&algo, &sector, 0.85, &s0).unwrap();
        assert_relative_eq!(sys.acal()[(0, 0)], (9.0 / 11.0) / 0.85, epsilon = 1e-12);
        assert_relative_eq!(sys.bcal()[(0, 0)], (-2.0 / 11.0) / 0.85, epsilon = 1e-12);
        let params = MultiplierParams::r#static(1.0);
        assert_relative_eq!(sys.ccal_at(&params)[(0, 0)], 9.0, epsilon = 1e-12);
        assert_relative_eq!(sys.dcal_at(&params), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn analysis_system_identity_scaling_case() {
        // rho = 1, l = 0, m = 0: Acal = A_a, Bcal = B_a, output row = L C_a
        let algo = Algorithm::gradient_descent(0.1);
        let sector = SectorBounds::new(0.0, 5.0).unwrap();
        let s0 = default_structure(0, 0.0).unwrap();
        let sys = build_analysis_system(&algo, &sector, 1.0, &s0).unwrap();
        assert_eq!(sys.acal(), algo.a());
        assert_eq!(sys.bcal(), algo.b());
        let params = MultiplierParams::r#static(1.0);
        assert_eq!(sys.ccal_at(&params), algo.c() * 5.0);
        assert_eq!(sys.dcal_at(&params), -1.0);
    }

    #[test]
    fn analysis_system_order_one_matches_series_composition() {
        use crate::sskit::{rho_scale, series, transfer_eval, StateSpaceSys};
        use num_complex::Complex64;
        let (algo, sector) = gd_instance();
        let structure = default_structure(1, 0.0).unwrap();
        let params = MultiplierParams::new(DMatrix::from_element(1, 1, -0.3), 1.0).unwrap();
        let rho = 0.8;
        let sys = build_analysis_system(&algo, &sector, rho, &structure).unwrap();

        // inner system: sector-filtered scaled loop (q -> p)
        let inner = StateSpaceSys::new(
            algo.a() + algo.b() * algo.c() * sector.m(),
            algo.b().clone(),
            algo.c() * sector.width(),
            DMatrix::from_element(1, 1, -1.0),
        )
        .unwrap();
        let inner = rho_scale(&inner, rho).unwrap();
        let filter = structure.filter_sys(&params);
        let composed = series(&inner, &filter).unwrap();

        let full = StateSpaceSys::new(
            sys.acal().clone(),
            sys.bcal().clone(),
            sys.ccal_at(&params),
            DMatrix::from_element(1, 1, sys.dcal_at(&params)),
        )
        .unwrap();
        for k in 0..5 {
            let z = Complex64::new(1.4 + 0.21 * k as f64, 0.7 - 0.13 * k as f64);
            let lhs = transfer_eval(&full, z).unwrap()[(0, 0)];
            let rhs = transfer_eval(&composed, z).unwrap()[(0, 0)];
            assert!((lhs - rhs).norm() <= 1e-10 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn gd_certifiable_at_085_not_at_070() {
        let (algo, sector) = gd_instance();
        let s0 = default_structure(0, 0.0).unwrap();
        let yes = certify_rate(&algo, &sector, 0.85, &s0).unwrap();
        assert!(yes.is_feasible());
        if let CertifyOutcome::Feasible(cert) = yes {
            assert!(cert.lmi_margin > 0.0);
            assert!(cert.x[(0, 0)] > 0.0);
        }
        let no = certify_rate(&algo, &sector, 0.70, &s0).unwrap();
        assert!(!no.is_feasible());
    }

    #[test]
    fn gd_lmi_instance_has_x_around_42() {
        // direct eigenvalue check of the reduced 2x2 quadratic form at X = 42
        let (algo, sector) = gd_instance();
        let s0 = default_structure(0, 0.0).unwrap();
        let sys = build_analysis_system(&algo, &sector, 0.85, &s0).unwrap();
        let params = MultiplierParams::r#static(1.0);
        let cert = Certificate {
            rho: 0.85,
            x: DMatrix::from_element(1, 1, 42.0),
            params,
            lmi_margin: 0.0,
        };
        let margin = cert.replay_margin(&algo, &sector, &s0).unwrap();
        assert!(margin > 0.0, "X = 42 should satisfy the LMI, margin {margin}");
        let _ = sys;
    }

    #[test]
    fn best_rate_gd_matches_scalar_oracle() {
        // oracle: max_{lambda in {m, L}} |1 - alpha lambda| = 9/11 for alpha = 2/(m+L)
        let (algo, sector) = gd_instance();
        let s0 = default_structure(0, 0.0).unwrap();
        let res = best_rate(&algo, &sector, &s0, 1e-3).unwrap();
        assert!((res.rho_star - 9.0 / 11.0).abs() <= 1e-2, "rho* = {}", res.rho_star);
        assert!(res.monotone_spot_check);

        // alpha = 1/L: oracle 1 - m/L = 0.9
        let algo2 = Algorithm::gradient_descent(0.1);
        let res2 = best_rate(&algo2, &sector, &s0, 1e-3).unwrap();
        assert!((res2.rho_star - 0.9).abs() <= 1e-2, "rho* = {}", res2.rho_star);
    }

    #[test]
    fn best_rate_coarse_tolerance_takes_one_step() {
        let (algo, sector) = gd_instance();
        let s0 = default_structure(0, 0.0).unwrap();
        let res = best_rate(&algo, &sector, &s0, 0.5).unwrap();
        // bracket (0, 1]: one bisection step beyond the initial probe
        let bisection_probes = res.probes.iter().filter(|(r, _)| *r < 1.0 && (*r - 0.75).abs() > 1e-9).count();
        assert!(res.probes.len() <= 3, "probes: {:?}", res.probes);
        let _ = bisection_probes;
    }

    #[test]
    fn certificate_json_round_trip_preserves_margins() {
        let (algo, sector) = gd_instance();
        let s0 = default_structure(0, 0.0).unwrap();
        let cert = match certify_rate(&algo, &sector, 0.85, &s0).unwrap() {
            CertifyOutcome::Feasible(c) => c,
            _ => panic!("expected feasible"),
        };
        let json = serde_json::to_string(&cert.to_json(&s0)).unwrap();
        let parsed: CertificateJson = serde_json::from_str(&json).unwrap();
        let restored = parsed.to_certificate().unwrap();
        let s_restored = parsed.structure.to_structure().unwrap();
        let m0 = cert.replay_margin(&algo, &sector, &s0).unwrap();
        let m1 = restored.replay_margin(&algo, &sector, &s_restored).unwrap();
        assert!((m0 - m1).abs() <= 1e-12 * m0.abs().max(1.0));
    }

    #[test]
    fn similarity_transform_preserves_feasibility_verdicts() {
        let sector = SectorBounds::new(1.0, 10.0).unwrap();
        let algo = Algorithm::momentum(0.25, 0.4, 0.3);
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 1.0]);
        let transformed = algo.transformed(&t).unwrap();
        let s0 = default_structure(0, 0.0).unwrap();
        for rho in [0.75, 0.85, 0.95] {
            let a = certify_rate(&algo, &sector, rho, &s0).unwrap().is_feasible();
            let b = certify_rate(&transformed, &sector, rho, &s0).unwrap().is_feasible();
            assert_eq!(a, b, "verdicts differ at rho = {rho}");
        }
    }

    #[test]
    fn filter_order_one_improves_on_order_zero() {
        let (algo, sector) = gd_instance();
        let tol = 1e-3;
        let r0 = best_rate(&algo, &sector, &default_structure(0, 0.0).unwrap(), tol).unwrap();
        let r1 = best_rate(&algo, &sector, &default_structure(1, 0.0).unwrap(), tol).unwrap();
        assert!(r1.rho_star <= r0.rho_star + tol, "l=1 {} vs l=0 {}", r1.rho_star, r0.rho_star);
    }
}

//! The commuting state-coordinate change that convexifies synthesis.
//!
//! The multiplier filter and the filtered plant's gradient channel are SISO
//! systems, so their series interconnection commutes. The two orderings are
//! related by a structured transformation built from four linear matrix
//! equations; crucially, those solutions depend affinely on the free filter
//! coefficients `(C_f, D_f)`, which keeps the synthesis inequalities affine
//! in all decision variables. The affine map is materialized once per basis
//! element of `(C_f, D_f)`.

use super::FilteredPlant;
use crate::error::{Error, Result};
use crate::multiplier::{MultiplierParams, MultiplierStructure};
use crate::sdp::MatExpr;
use crate::sskit::{ctrb, poly, solve_sylvester};
use nalgebra::DMatrix;

/// Transform data at fixed filter coefficients.
#[derive(Debug, Clone)]
pub struct CommutingTransform {
    pub k: DMatrix<f64>,
    pub lmat: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// `[L^{-1}, -L^{-1} K]`, the filter-state rows of the full transform.
    pub t_f: DMatrix<f64>,
    /// `[N L^{-1}, M - N L^{-1} K]`, the plant-state rows.
    pub t_tilde: DMatrix<f64>,
    /// The stacked square transform `[T_f; T_tilde]`.
    pub t_full: DMatrix<f64>,
    /// Residuals of the four defining linear equations.
    pub residuals: [f64; 4],
    /// Condition number of `t_full`.
    pub condition: f64,
}

/// The affine map `(C_f, D_f) -> (M, N, T_tilde)` with the fixed solutions
/// `K` and `L` precomputed.
#[derive(Debug, Clone)]
pub struct TransformMap {
    k: DMatrix<f64>,
    lmat: DMatrix<f64>,
    lmat_inv: DMatrix<f64>,
    /// Per-component solutions `N_j` of `Ã N_j - N_j A_f + B̃ e_j' = 0`.
    n_basis: Vec<DMatrix<f64>>,
    /// Per-component factors `M_j = Ã^j alpha(Ã)^{-1}`.
    m_basis: Vec<DMatrix<f64>>,
    /// T̃ contribution of each `C_f` component.
    ttilde_cf: Vec<DMatrix<f64>>,
    /// T̃ contribution of `D_f`: `[0, I]`.
    ttilde_df: DMatrix<f64>,
    filter_order: usize,
    plant_order: usize,
}

impl TransformMap {
    pub fn new(fp: &FilteredPlant, structure: &MultiplierStructure) -> Result<Self> {
        let l = structure.order();
        let n = fp.state_dim();
        let a_f = structure.a_f();
        let b_f = structure.b_f();
        let a_t = fp.a_tilde();
        let b_t = fp.b_tilde();
        let c_zt = fp.c_z_tilde();
        let d_zt = fp.d_z_tilde();

        // 1) A_f K - K Ã + B_f C̃_z = 0
        let k = solve_sylvester(a_f, a_t, &(b_f * c_zt))?.x;

        // 2) L K(A_f, B_f) = K(A_f, B_f D̃_z - K B̃)
        let (lmat, lmat_inv) = if l == 0 {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        } else {
            let kc = ctrb(a_f, b_f)?;
            let w = ctrb(a_f, &(b_f * d_zt - &k * b_t))?;
            let kc_inv = kc.clone().try_inverse().ok_or_else(|| {
                Error::SolverFailure("companion controllability matrix is singular".into())
            })?;
            let lmat = &w * &kc_inv;
            let lmat_inv = lmat.clone().try_inverse().ok_or_else(|| {
                Error::InadmissibleStructure(
                    "transform factor L is singular; the gradient channel vanishes on the filter spectrum"
                        .into(),
                )
            })?;
            (lmat, lmat_inv)
        };

        // 3) per-component M_j and 4) per-component N_j
        let alpha_at = poly::eval_matrix(structure.alpha(), a_t);
        let alpha_inv = alpha_at.clone().try_inverse().ok_or_else(|| {
            Error::InadmissibleStructure(
                "alpha(Ã) is singular; filter poles collide with plant eigenvalues".into(),
            )
        })?;
        let mut m_basis = Vec::with_capacity(l);
        let mut n_basis = Vec::with_capacity(l);
        let mut a_pow = DMatrix::<f64>::identity(n, n);
        for j in 0..l {
            m_basis.push(&a_pow * &alpha_inv);
            let mut e_j = DMatrix::zeros(1, l);
            e_j[(0, j)] = 1.0;
            n_basis.push(solve_sylvester(a_t, a_f, &(b_t * e_j))?.x);
            if j + 1 < l {
                a_pow = a_t * &a_pow;
            }
        }

        let mut ttilde_df = DMatrix::zeros(n, l + n);
        ttilde_df.view_mut((0, l), (n, n)).copy_from(&DMatrix::identity(n, n));
        let mut ttilde_cf = Vec::with_capacity(l);
        for j in 0..l {
            let nl = &n_basis[j] * &lmat_inv;
            let mut t = DMatrix::zeros(n, l + n);
            t.view_mut((0, 0), (n, l)).copy_from(&nl);
            t.view_mut((0, l), (n, n)).copy_from(&(&m_basis[j] - &nl * &k));
            ttilde_cf.push(t);
        }

        Ok(TransformMap {
            k,
            lmat,
            lmat_inv,
            n_basis,
            m_basis,
            ttilde_cf,
            ttilde_df,
            filter_order: l,
            plant_order: n,
        })
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn lmat(&self) -> &DMatrix<f64> {
        &self.lmat
    }

    /// `T̃` as an affine expression in the coefficient variables. For order
    /// zero pass `cf = None`; then `T̃ = D_f · I`.
    pub fn ttilde_expr(&self, cf: Option<&MatExpr>, df: &MatExpr) -> MatExpr {
        let mut acc = df.mul(&MatExpr::constant(self.ttilde_df.clone()));
        if let Some(cf) = cf {
            for j in 0..self.filter_order {
                let mut sel = DMatrix::zeros(self.filter_order, 1);
                sel[(j, 0)] = 1.0;
                let cf_j = cf.rmul(&sel); // 1x1 expression
                acc = acc.add(&cf_j.mul(&MatExpr::constant(self.ttilde_cf[j].clone())));
            }
        }
        acc
    }

    /// Materializes the transform at fixed coefficients, with residuals of
    /// the defining equations and the condition number of the full map.
    pub fn at(
        &self,
        fp: &FilteredPlant,
        structure: &MultiplierStructure,
        params: &MultiplierParams,
    ) -> Result<CommutingTransform> {
        let l = self.filter_order;
        let n = self.plant_order;
        if params.order() != l {
            return Err(Error::DimensionMismatch(format!(
                "params order {} does not match structure order {l}",
                params.order()
            )));
        }
        let d_f = params.d_f();
        let mut m = DMatrix::<f64>::identity(n, n) * d_f;
        let mut nn = DMatrix::<f64>::zeros(n, l);
        for j in 0..l {
            let c_j = params.c_f()[(0, j)];
            m += &self.m_basis[j] * c_j;
            nn += &self.n_basis[j] * c_j;
        }
        let mut t_tilde = &self.ttilde_df * d_f;
        for j in 0..l {
            t_tilde += &self.ttilde_cf[j] * params.c_f()[(0, j)];
        }
        let mut t_f = DMatrix::zeros(l, l + n);
        t_f.view_mut((0, 0), (l, l)).copy_from(&self.lmat_inv);
        t_f.view_mut((0, l), (l, n)).copy_from(&(-&self.lmat_inv * &self.k));
        let mut t_full = DMatrix::zeros(l + n, l + n);
        t_full.view_mut((0, 0), (l, l + n)).copy_from(&t_f);
        t_full.view_mut((l, 0), (n, l + n)).copy_from(&t_tilde);

        // residuals of the four defining equations
        let a_f = structure.a_f();
        let b_f = structure.b_f();
        let a_t = fp.a_tilde();
        let b_t = fp.b_tilde();
        let r1 = (a_f * &self.k - &self.k * a_t + b_f * fp.c_z_tilde()).norm();
        let r2 = if l == 0 {
            0.0
        } else {
            (&self.lmat * ctrb(a_f, b_f)?
                - ctrb(a_f, &(b_f * fp.d_z_tilde() - &self.k * b_t))?)
            .norm()
        };
        let alpha_at = poly::eval_matrix(structure.alpha(), a_t);
        let mut beta_at = alpha_at.clone() * d_f;
        let mut a_pow = DMatrix::<f64>::identity(n, n);
        for j in 0..l {
            beta_at += &a_pow * params.c_f()[(0, j)];
            if j + 1 < l {
                a_pow = a_t * &a_pow;
            }
        }
        let r3 = (&m * &alpha_at - beta_at).norm();
        let r4 = (a_t * &nn - &nn * a_f + b_t * params.c_f()).norm();

        let svd = t_full.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };

        let scale = 1.0 + a_t.norm() + a_f.norm() + params.c_f().norm() + d_f.abs();
        let var_scale = 1.0 + self.k.norm() + self.lmat.norm() + m.norm() + nn.norm();
        for (i, r) in [r1, r2, r3, r4].iter().enumerate() {
            if *r > 1e-9 * scale * var_scale {
                return Err(Error::SolverFailure(format!(
                    "commuting-transform equation {} residual {r:.3e} too large",
                    i + 1
                )));
            }
        }

        Ok(CommutingTransform {
            k: self.k.clone(),
            lmat: self.lmat.clone(),
            m,
            n: nn,
            t_f,
            t_tilde,
            t_full,
            residuals: [r1, r2, r3, r4],
            condition,
        })
    }
}

/// One-shot construction of the commuting transform at fixed coefficients.
pub fn solve_commuting_transform(
    fp: &FilteredPlant,
    structure: &MultiplierStructure,
    params: &MultiplierParams,
) -> Result<CommutingTransform> {
    TransformMap::new(fp, structure)?.at(fp, structure, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::{default_structure, SectorBounds};
    use crate::sskit::Plant;
    use crate::synthesis::build_filtered_plant;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_instance_matches_hand_solution() {
        // trivial channels, l = 1, alpha = z, m = 1, L = 10, rho = 0.7,
        // C_f = -0.5, D_f = 1
        let plant = Plant::algorithm_design();
        let sector = SectorBounds::new(1.0, 10.0).unwrap();
        let fp = build_filtered_plant(&plant, &sector, 0.7).unwrap();
        let structure = default_structure(1, 0.0).unwrap();
        let params = MultiplierParams::new(DMatrix::from_element(1, 1, -0.5), 1.0).unwrap();
        let t = solve_commuting_transform(&fp, &structure, &params).unwrap();
        assert_relative_eq!(t.k[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.lmat[(0, 0)], 9.0, epsilon = 1e-12);
        assert_relative_eq!(t.n[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(t.m[(0, 0)], 0.65, epsilon = 1e-12);
        assert_relative_eq!(t.t_tilde[(0, 0)], 1.0 / 18.0, epsilon = 1e-12);
        assert_relative_eq!(t.t_tilde[(0, 1)], 0.65, epsilon = 1e-12);
    }

    #[test]
    fn zero_cf_decouples() {
        let plant = Plant::algorithm_design();
        let sector = SectorBounds::new(1.0, 10.0).unwrap();
        let fp = build_filtered_plant(&plant, &sector, 0.8).unwrap();
        let structure = default_structure(1, 0.0).unwrap();
        let params = MultiplierParams::new(DMatrix::zeros(1, 1), 2.0).unwrap();
        let t = solve_commuting_transform(&fp, &structure, &params).unwrap();
        assert_relative_eq!(t.n.norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(
            (t.m.clone() - DMatrix::identity(1, 1) * 2.0).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(t.t_tilde[(0, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(t.t_tilde[(0, 1)], 2.0, epsilon = 1e-12);
    }
}

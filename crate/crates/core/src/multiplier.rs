//! Dynamic multiplier machinery: the sector transform, companion filter
//! structures with fixed poles, the linear constraints on the free filter
//! coefficients, and sampled validation oracles for the function class.

use crate::error::{Error, Result};
use crate::sskit::{companion, ctrb, poly, spectral_radius, StateSpaceSys};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Linear-inequality margin used when the strict constraints on the filter
/// coefficients enter an SDP.
pub const EPS_LIN: f64 = 1e-7;

/// The sector `[m, L]` of gradients of `m`-strongly convex, `L`-smooth
/// functions. `L > m >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    m: f64,
    l: f64,
}

impl SectorBounds {
    pub fn new(m: f64, l: f64) -> Result<Self> {
        if !(m >= 0.0 && l > m && m.is_finite() && l.is_finite()) {
            return Err(Error::InvalidSector { m, l });
        }
        Ok(SectorBounds { m, l })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// The smoothness constant `L`.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn width(&self) -> f64 {
        self.l - self.m
    }
}

/// A function in `S_{m,L}` seen through its evaluators.
pub trait Objective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn sector(&self) -> SectorBounds;
    fn dim(&self) -> usize;
}

/// Fixed part of a dynamic multiplier: the companion pair `(A_f, B_f)` of a
/// monic polynomial `alpha` whose roots all lie strictly inside the disc of
/// the working rate and whose low-order coefficients are nonpositive.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierStructure {
    order: usize,
    alpha: Vec<f64>,
    a_f: DMatrix<f64>,
    b_f: DMatrix<f64>,
    z0: Option<f64>,
    max_root_modulus: f64,
}

impl MultiplierStructure {
    /// Builds a structure from a full monic coefficient list (low order
    /// first, trailing `1.0`). `alpha = [1.0]` gives the empty order-0
    /// structure.
    pub fn from_alpha(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidInput("alpha must be non-empty".into()));
        }
        if *alpha.last().unwrap() != 1.0 {
            return Err(Error::NotMonic);
        }
        let order = alpha.len() - 1;
        for (j, c) in alpha.iter().take(order).enumerate() {
            if *c > 0.0 {
                return Err(Error::InadmissibleStructure(format!(
                    "coefficient alpha_{j} = {c} must be <= 0"
                )));
            }
        }
        let (a_f, b_f, max_root_modulus) = if order == 0 {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 1), 0.0)
        } else {
            let a_f = companion(&alpha)?;
            let mut b_f = DMatrix::zeros(order, 1);
            b_f[(order - 1, 0)] = 1.0;
            let radius = poly::roots(&alpha)?
                .iter()
                .map(|r| r.norm())
                .fold(0.0_f64, f64::max);
            (a_f, b_f, radius)
        };
        Ok(MultiplierStructure { order, alpha, a_f, b_f, z0: None, max_root_modulus })
    }

    pub fn order(&self) -> usize {
        self.order
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn a_f(&self) -> &DMatrix<f64> {
        &self.a_f
    }
    pub fn b_f(&self) -> &DMatrix<f64> {
        &self.b_f
    }
    pub fn z0(&self) -> Option<f64> {
        self.z0
    }

    /// Largest modulus among the roots of `alpha` (the spectral radius of
    /// `A_f`); the bisection bracket opens here.
    pub fn max_root_modulus(&self) -> f64 {
        self.max_root_modulus
    }

    /// All roots of `alpha` must lie strictly inside the disc of radius
    /// `rho` for the structure to be usable at that rate.
    pub fn admissible_at(&self, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidInput(format!("rho must lie in (0, 1], got {rho}")));
        }
        if self.max_root_modulus >= rho {
            return Err(Error::InadmissibleStructure(format!(
                "filter pole modulus {} is not below rho = {}",
                self.max_root_modulus, rho
            )));
        }
        Ok(())
    }

    /// The controllability matrix `K(A_f, B_f)` (invertible for `l >= 1`).
    pub fn ctrb(&self) -> DMatrix<f64> {
        ctrb(&self.a_f, &self.b_f).expect("companion pair is conformable")
    }

    pub fn filter_sys(&self, params: &MultiplierParams) -> StateSpaceSys {
        StateSpaceSys::new(
            self.a_f.clone(),
            self.b_f.clone(),
            params.c_f.clone(),
            DMatrix::from_element(1, 1, params.d_f),
        )
        .expect("filter realization is conformable")
    }
}

/// Canonical structure of the synthesis procedure: `alpha(z) = z^l - z0^l`.
pub fn default_structure(l: usize, z0: f64) -> Result<MultiplierStructure> {
    if !(0.0..1.0).contains(&z0) {
        return Err(Error::InvalidInput(format!("z0 must lie in [0, 1), got {z0}")));
    }
    let mut alpha = vec![0.0; l + 1];
    alpha[l] = 1.0;
    if l > 0 {
        alpha[0] = -z0.powi(l as i32);
    }
    let mut s = MultiplierStructure::from_alpha(alpha)?;
    s.z0 = Some(z0);
    Ok(s)
}

/// Free multiplier coefficients `(C_f, D_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierParams {
    c_f: DMatrix<f64>,
    d_f: f64,
}

impl MultiplierParams {
    pub fn new(c_f: DMatrix<f64>, d_f: f64) -> Result<Self> {
        if c_f.nrows() != 1 && !(c_f.nrows() == 0 && c_f.ncols() == 0) {
            return Err(Error::DimensionMismatch("C_f must be a row vector".into()));
        }
        if !d_f.is_finite() || c_f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("multiplier parameters"));
        }
        let c_f = if c_f.nrows() == 0 { DMatrix::zeros(1, 0) } else { c_f };
        Ok(MultiplierParams { c_f, d_f })
    }

    /// The order-0 multiplier `D_f = d_f`.
    pub fn r#static(d_f: f64) -> Self {
        MultiplierParams { c_f: DMatrix::zeros(1, 0), d_f }
    }

    pub fn c_f(&self) -> &DMatrix<f64> {
        &self.c_f
    }
    pub fn d_f(&self) -> f64 {
        self.d_f
    }
    pub fn order(&self) -> usize {
        self.c_f.ncols()
    }
}

/// Wire format of multiplier parameters inside certificates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplierParamsJson {
    #[serde(rename = "Cf")]
    pub cf: Vec<f64>,
    #[serde(rename = "Df")]
    pub df: f64,
}

impl MultiplierParamsJson {
    pub fn from_params(p: &MultiplierParams) -> Self {
        MultiplierParamsJson { cf: p.c_f.iter().cloned().collect(), df: p.d_f }
    }

    pub fn to_params(&self) -> Result<MultiplierParams> {
        MultiplierParams::new(DMatrix::from_row_slice(1, self.cf.len(), &self.cf), self.df)
    }
}

/// The static sector transform applied to signal samples:
/// `p = L z - w`, `q = -m z + w`.
pub fn sector_filter(
    z: &DVector<f64>,
    w: &DVector<f64>,
    sector: &SectorBounds,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if z.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "sector_filter: z has {} entries, w has {}",
            z.len(),
            w.len()
        )));
    }
    let p = z * sector.l() - w;
    let q = w - z * sector.m();
    Ok((p, q))
}

/// Markov parameters `lambda_0 = D_f`, `lambda_{nu+1} = C_f A_f^nu B_f`,
/// returned as `lambda_0 .. lambda_count`.
pub fn markov_parameters(
    structure: &MultiplierStructure,
    params: &MultiplierParams,
    count: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(count + 1);
    out.push(params.d_f());
    if structure.order() == 0 {
        out.resize(count + 1, 0.0);
        return out;
    }
    let mut v = structure.b_f().clone();
    for _ in 0..count {
        out.push((params.c_f() * &v)[(0, 0)]);
        v = structure.a_f() * v;
    }
    out
}

/// Checks the infinite Markov-parameter conditions on a truncated sequence:
/// `lambda_nu <= 0` for `nu >= 1` and `sum rho^{-nu} lambda_nu > 0`, with a
/// geometric bound accounting for the discarded tail.
pub fn check_iirc(lambdas: &[f64], rho: f64, horizon: usize) -> Result<bool> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    let n = horizon.min(lambdas.len().saturating_sub(1));
    let terms: Vec<f64> = (0..=n).map(|nu| rho.powi(-(nu as i32)) * lambdas[nu]).collect();

    // geometric tail bound from the trailing ratios
    let tail = {
        let last = terms.last().copied().unwrap_or(0.0).abs();
        if last <= 1e-300 {
            0.0
        } else {
            let mut ratio: f64 = 0.0;
            let lookback = 8.min(terms.len() - 1);
            for k in (terms.len() - lookback)..terms.len() {
                let prev = terms[k - 1].abs();
                if prev > 0.0 {
                    ratio = ratio.max(terms[k].abs() / prev);
                }
            }
            if ratio >= 1.0 {
                return Err(Error::InadmissibleStructure(format!(
                    "Markov tail does not converge at rho = {rho} (ratio {ratio:.3})"
                )));
            }
            last * ratio / (1.0 - ratio)
        }
    };
    if terms.last().copied().unwrap_or(0.0).abs() > 1e-12 && tail > 1e-12 * terms[0].abs().max(1.0)
    {
        return Err(Error::InadmissibleStructure(format!(
            "horizon {n} too short: tail bound {tail:.3e} is not negligible"
        )));
    }

    let signs_ok = lambdas[1..=n].iter().all(|l| *l <= 0.0);
    let sum: f64 = terms.iter().sum();
    Ok(signs_ok && sum - tail > 0.0)
}

/// Margins of the linear admissibility constraints on `(C_f, D_f)`.
#[derive(Debug, Clone)]
pub struct ConstraintReport {
    pub satisfied: bool,
    /// Minimum over entries of `-(C_f K(A_f, B_f))`; the sign condition holds
    /// iff this is `>= 0`.
    pub entrywise_min: f64,
    /// The scalar `D_f + C_f (rho I - A_f)^{-1} B_f`; must be `> 0`.
    pub scalar_margin: f64,
}

/// Evaluates the two constraints on the filter coefficients at rate `rho`:
/// `C_f K(A_f, B_f) <= 0` entrywise and `D_f + C_f (rho I - A_f)^{-1} B_f > 0`.
pub fn constraint_assert(
    structure: &MultiplierStructure,
    params: &MultiplierParams,
    rho: f64,
) -> Result<ConstraintReport> {
    if params.order() != structure.order() {
        return Err(Error::DimensionMismatch(format!(
            "params order {} does not match structure order {}",
            params.order(),
            structure.order()
        )));
    }
    let l = structure.order();
    if l == 0 {
        return Ok(ConstraintReport {
            satisfied: params.d_f() > 0.0,
            entrywise_min: f64::INFINITY,
            scalar_margin: params.d_f(),
        });
    }
    let scalar_margin = params.d_f() + resolvent_row(structure, rho)?.dot(&params.c_f().row(0));
    let ck = params.c_f() * structure.ctrb();
    let entrywise_min = ck.iter().map(|v| -v).fold(f64::INFINITY, f64::min);
    Ok(ConstraintReport {
        satisfied: entrywise_min >= 0.0 && scalar_margin > 0.0,
        entrywise_min,
        scalar_margin,
    })
}

/// The row functional `v` with `C_f (rho I - A_f)^{-1} B_f = C_f · v`,
/// i.e. `v = (rho I - A_f)^{-1} B_f` as a row view.
pub fn resolvent_row(structure: &MultiplierStructure, rho: f64) -> Result<nalgebra::RowDVector<f64>> {
    let l = structure.order();
    if l == 0 {
        return Ok(nalgebra::RowDVector::zeros(0));
    }
    let m = DMatrix::identity(l, l) * rho - structure.a_f();
    let scale = structure.a_f().amax().max(rho).max(1.0);
    let lu = m.lu();
    let sol = lu
        .solve(structure.b_f())
        .filter(|s| s.amax().is_finite() && s.amax() <= 1e14 * scale)
        .ok_or_else(|| {
            Error::InadmissibleStructure(format!("rho = {rho} lies in the spectrum of A_f"))
        })?;
    Ok(sol.column(0).transpose())
}

/// Adds the admissibility constraints on the filter coefficients to an LMI
/// problem: `C_f K(A_f, B_f) <= 0` entrywise and
/// `D_f + C_f (rho I - A_f)^{-1} B_f >= EPS_LIN`, both affine in the
/// expressions supplied for `C_f` and `D_f`.
pub fn add_filter_constraints(
    problem: &mut crate::sdp::LmiProblem,
    structure: &MultiplierStructure,
    cf: &crate::sdp::MatExpr,
    df: &crate::sdp::MatExpr,
    rho: f64,
) -> Result<()> {
    if structure.order() == 0 {
        return Ok(());
    }
    let ck = cf.rmul(&structure.ctrb());
    problem.require_le_entrywise("markov_sign", &ck, 0.0);
    let res = resolvent_row(structure, rho)?;
    let res_col = DMatrix::from_column_slice(res.len(), 1, res.transpose().as_slice());
    let scalar = df.add(&cf.rmul(&res_col));
    problem.require_ge_entrywise("markov_sum", &scalar, EPS_LIN);
    Ok(())
}

/// Spectral radius of the inverse-filter dynamics `A_f - B_f D_f^{-1} C_f`.
pub fn inverse_filter_radius(structure: &MultiplierStructure, params: &MultiplierParams) -> f64 {
    if structure.order() == 0 {
        return 0.0;
    }
    let m = structure.a_f() - structure.b_f() * params.c_f() / params.d_f();
    spectral_radius(&m)
}

/// Worst violation of the function-class inequality
/// `V(u) - V(y) <= grad f_m(u)' [grad f^L(u) - grad f^L(y)]` with
/// `V(x) = (L - m) f_m(x) - q(grad f_m(x))` over the supplied pairs.
/// Nonpositive (up to round-off) for every member of the class.
pub fn lemma1_oracle<F: Objective + ?Sized>(f: &F, pairs: &[(DVector<f64>, DVector<f64>)]) -> f64 {
    let sector = f.sector();
    let (m, l) = (sector.m(), sector.l());
    let v = |x: &DVector<f64>| -> f64 {
        let fm = f.value(x) - 0.5 * m * x.norm_squared();
        let gm = f.gradient(x) - x * m;
        (l - m) * fm - 0.5 * gm.norm_squared()
    };
    let mut worst = f64::NEG_INFINITY;
    for (u, y) in pairs {
        let gm_u = f.gradient(u) - u * m;
        let gl_u = u * l - f.gradient(u);
        let gl_y = y * l - f.gradient(y);
        let lhs = v(u) - v(y);
        let rhs = gm_u.dot(&(gl_u - gl_y));
        worst = worst.max(lhs - rhs);
    }
    worst
}

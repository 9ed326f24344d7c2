//! State-space algebra for discrete-time LTI systems.
//!
//! Everything downstream (multiplier filters, analysis/synthesis LMIs, the
//! simulators) works with real realizations `(A, B, C, D)`. Empty-state
//! systems (`n = 0`) are first class: they carry order-zero multipliers and
//! static controllers.

mod compose;
mod equations;
pub mod poly;

pub use compose::{compose_algorithm, decompose_algorithm, wellposedness_det};
pub use equations::{solve_stein, solve_sylvester, EquationSolution};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Relative tolerance for eigenvalue/detectability tests.
pub const SPECTRAL_TOL: f64 = 1e-8;

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// JSON wire format for a real matrix: row-major `data` with explicit shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixJson { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidInput(format!(
                "matrix data length {} does not match shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// A real discrete-time LTI realization `x+ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSys {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceSys {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        if b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent realization: A {n}x{n}, B {}x{}, C {}x{}, D {}x{}",
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&d, "D")] {
            if !all_finite(m) {
                return Err(Error::NonFinite(match name {
                    "A" => "A",
                    "B" => "B",
                    "C" => "C",
                    _ => "D",
                }));
            }
        }
        Ok(StateSpaceSys { a, b, c, d })
    }

    /// Purely static system `y = Du`.
    pub fn from_static(d: DMatrix<f64>) -> Self {
        let (p, m) = (d.nrows(), d.ncols());
        StateSpaceSys {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    /// The identity map of width `m` (empty state, `D = I`).
    pub fn identity(m: usize) -> Self {
        Self::from_static(DMatrix::identity(m, m))
    }

    /// The SISO unit delay `z^{-1}`.
    pub fn unit_delay() -> Self {
        StateSpaceSys {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            d: DMatrix::zeros(1, 1),
        }
    }

    /// The SISO discrete-time integrator `1/(z-1)`: `x+ = x + u`, `y = x`.
    pub fn integrator() -> Self {
        StateSpaceSys {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            d: DMatrix::zeros(1, 1),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// One simulation step: returns `(x_next, y)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let x_next = &self.a * x + &self.b * u;
        let y = &self.c * x + &self.d * u;
        (x_next, y)
    }
}

/// Serialized form of a realization (`{"A":…, "B":…, "C":…, "D":…}`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemJson {
    #[serde(rename = "A")]
    pub a: MatrixJson,
    #[serde(rename = "B")]
    pub b: MatrixJson,
    #[serde(rename = "C")]
    pub c: MatrixJson,
    #[serde(rename = "D")]
    pub d: MatrixJson,
}

impl SystemJson {
    pub fn from_sys(s: &StateSpaceSys) -> Self {
        SystemJson {
            a: MatrixJson::from_matrix(s.a()),
            b: MatrixJson::from_matrix(s.b()),
            c: MatrixJson::from_matrix(s.c()),
            d: MatrixJson::from_matrix(s.d()),
        }
    }

    pub fn to_sys(&self) -> Result<StateSpaceSys> {
        StateSpaceSys::new(
            self.a.to_matrix()?,
            self.b.to_matrix()?,
            self.c.to_matrix()?,
            self.d.to_matrix()?,
        )
    }
}

/// Series interconnection `second ∘ first` (the output of `first` drives
/// `second`). The stacked state puts `second`'s state on top.
pub fn series(first: &StateSpaceSys, second: &StateSpaceSys) -> Result<StateSpaceSys> {
    if first.output_dim() != second.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "series: first has {} outputs, second expects {} inputs",
            first.output_dim(),
            second.input_dim()
        )));
    }
    let (n1, n2) = (first.state_dim(), second.state_dim());
    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n2, n2)).copy_from(second.a());
    a.view_mut((0, n2), (n2, n1)).copy_from(&(second.b() * first.c()));
    a.view_mut((n2, n2), (n1, n1)).copy_from(first.a());
    let mut b = DMatrix::zeros(n, first.input_dim());
    b.view_mut((0, 0), (n2, first.input_dim())).copy_from(&(second.b() * first.d()));
    b.view_mut((n2, 0), (n1, first.input_dim())).copy_from(first.b());
    let mut c = DMatrix::zeros(second.output_dim(), n);
    c.view_mut((0, 0), (second.output_dim(), n2)).copy_from(second.c());
    c.view_mut((0, n2), (second.output_dim(), n1)).copy_from(&(second.d() * first.c()));
    let d = second.d() * first.d();
    StateSpaceSys::new(a, b, c, d)
}

/// Replaces `(A, B)` by `rho^{-1} (A, B)`; `C`, `D` are untouched.
pub fn rho_scale(sys: &StateSpaceSys, rho: f64) -> Result<StateSpaceSys> {
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
    }
    StateSpaceSys::new(
        sys.a() / rho,
        sys.b() / rho,
        sys.c().clone(),
        sys.d().clone(),
    )
}

/// Replaces every block matrix `M` by `M ⊗ I_d`.
pub fn kron_expand(sys: &StateSpaceSys, d: usize) -> Result<StateSpaceSys> {
    if d == 0 {
        return Err(Error::InvalidInput("kron_expand needs d >= 1".into()));
    }
    let id = DMatrix::<f64>::identity(d, d);
    StateSpaceSys::new(
        sys.a().kronecker(&id),
        sys.b().kronecker(&id),
        sys.c().kronecker(&id),
        sys.d().kronecker(&id),
    )
}

/// Evaluates the transfer matrix `C (zI - A)^{-1} B + D` at a complex point.
pub fn transfer_eval(sys: &StateSpaceSys, z: Complex64) -> Result<DMatrix<Complex64>> {
    let n = sys.state_dim();
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
    let d_c = to_c(sys.d());
    if n == 0 {
        return Ok(d_c);
    }
    let mut zi_a = to_c(sys.a());
    zi_a.neg_mut();
    for i in 0..n {
        zi_a[(i, i)] += z;
    }
    let scale = sys.a().amax().max(z.norm()).max(1.0);
    let lu = zi_a.lu();
    let x = lu
        .solve(&to_c(sys.b()))
        .ok_or(Error::PoleAtEvaluationPoint)?;
    let x_max = x.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
    if !x_max.is_finite() || x_max > scale / (SPECTRAL_TOL * SPECTRAL_TOL) * sys.b().amax().max(1.0)
    {
        return Err(Error::PoleAtEvaluationPoint);
    }
    Ok(to_c(sys.c()) * x + d_c)
}

/// Companion matrix of a monic real polynomial given by its full coefficient
/// list `alpha_0, …, alpha_{l-1}, 1` (low order first). The last row is
/// `(-alpha_0, …, -alpha_{l-1})` and the superdiagonal is the identity.
pub fn companion(alpha: &[f64]) -> Result<DMatrix<f64>> {
    if alpha.is_empty() || alpha.len() < 2 {
        return Err(Error::InvalidInput(
            "companion needs a polynomial of degree >= 1".into(),
        ));
    }
    if *alpha.last().unwrap() != 1.0 {
        return Err(Error::NotMonic);
    }
    let l = alpha.len() - 1;
    let mut m = DMatrix::zeros(l, l);
    for i in 0..l.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..l {
        m[(l - 1, j)] = -alpha[j];
    }
    Ok(m)
}

/// Kalman controllability matrix `(B, AB, …, A^{n-1}B)`.
pub fn ctrb(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "ctrb: A {}x{}, B {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let n = a.nrows();
    let m = b.ncols();
    let mut k = DMatrix::zeros(n, n * m);
    let mut power = b.clone();
    for j in 0..n {
        k.view_mut((0, j * m), (n, m)).copy_from(&power);
        if j + 1 < n {
            power = a * &power;
        }
    }
    Ok(k)
}

/// Orthonormal basis of the kernel of `M`, as columns. Uses the singular
/// value threshold `1e-10 * sigma_max`; the matrix is padded square so the
/// decomposition carries the full right singular basis.
pub fn kernel_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = (m.nrows(), m.ncols());
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-10 * sigma_max;
    let mut cols = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= tol {
            cols.push(v_t.row(i).transpose());
        }
    }
    // rows of v_t beyond the stored singular values (if any) also span kernel
    for i in svd.singular_values.len()..v_t.nrows() {
        cols.push(v_t.row(i).transpose());
    }
    let mut out = DMatrix::zeros(c, cols.len());
    for (j, col) in cols.iter().enumerate() {
        out.column_mut(j).copy_from(col);
    }
    out
}

/// Spectral radius via the complex eigenvalues of `A`.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// PBH detectability test: every unobservable mode must satisfy `|lambda| < 1`.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let scale = a.amax().max(1.0);
    let tol = SPECTRAL_TOL * scale;
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - SPECTRAL_TOL {
            continue;
        }
        // stack [A - lambda I; C] and check full column rank
        let mut stacked = DMatrix::<Complex64>::zeros(n + c.nrows(), n);
        let mut top = to_c(a);
        for i in 0..n {
            top[(i, i)] -= lambda;
        }
        stacked.view_mut((0, 0), (n, n)).copy_from(&top);
        stacked.view_mut((n, 0), (c.nrows(), n)).copy_from(&to_c(c));
        let svd = stacked.svd(false, false);
        let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_sv <= tol {
            return false;
        }
    }
    true
}

/// The SISO-per-coordinate algorithm realization of the loop `w = ∇f(z)`:
/// `x+ = (A_a ⊗ I_d)x + (B_a ⊗ I_d)w`, `z = (C_a ⊗ I_d)x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Algorithm {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Algorithm {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("A_a must be square".into()));
        }
        let n = a.nrows();
        if b.nrows() != n || b.ncols() != 1 || c.nrows() != 1 || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "algorithm must be SISO: A {n}x{n}, B {}x{}, C {}x{}",
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if !(all_finite(&a) && all_finite(&b) && all_finite(&c)) {
            return Err(Error::NonFinite("algorithm matrices"));
        }
        if !is_detectable(&a, &c) {
            return Err(Error::InvalidInput(
                "(A_a, C_a) is not detectable; an unobservable mode with |lambda| >= 1 exists"
                    .into(),
            ));
        }
        Ok(Algorithm { a, b, c })
    }

    /// Gradient descent `z+ = z - alpha ∇f(z)` as `(1, -alpha, 1)`.
    pub fn gradient_descent(alpha: f64) -> Self {
        Algorithm {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, -alpha),
            c: DMatrix::from_element(1, 1, 1.0),
        }
    }

    /// Momentum family covering Nesterov (`gamma = beta`) and triple momentum.
    pub fn momentum(alpha: f64, beta: f64, gamma: f64) -> Self {
        Algorithm {
            a: DMatrix::from_row_slice(2, 2, &[1.0 + beta, -beta, 1.0, 0.0]),
            b: DMatrix::from_column_slice(2, 1, &[-alpha, 0.0]),
            c: DMatrix::from_row_slice(1, 2, &[1.0 + gamma, -gamma]),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Whether 1 is an eigenvalue of `A_a` (necessary for solving the
    /// optimization problem; the algorithm must contain an integrator model).
    pub fn has_integrator_eigenvalue(&self) -> bool {
        let tol = SPECTRAL_TOL * self.a.amax().max(1.0);
        self.a
            .complex_eigenvalues()
            .iter()
            .any(|l| (l - Complex64::new(1.0, 0.0)).norm() <= tol)
    }

    pub fn to_sys(&self) -> StateSpaceSys {
        StateSpaceSys {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: DMatrix::zeros(1, 1),
        }
    }

    /// Applies a state-coordinate change `T`.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Result<Algorithm> {
        let ti = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("similarity transform is singular".into()))?;
        Algorithm::new(t * &self.a * &ti, t * &self.b, &self.c * &ti)
    }
}

/// The general synthesis plant: `z` is fed to the gradient, `y` to the
/// controller. There is no `w -> z` feedthrough and `y` has none at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    a: DMatrix<f64>,
    b_w: DMatrix<f64>,
    b: DMatrix<f64>,
    c_z: DMatrix<f64>,
    d_z: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Plant {
    pub fn new(
        a: DMatrix<f64>,
        b_w: DMatrix<f64>,
        b: DMatrix<f64>,
        c_z: DMatrix<f64>,
        d_z: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("plant A must be square".into()));
        }
        let n = a.nrows();
        if b_w.nrows() != n
            || b_w.ncols() != 1
            || b.nrows() != n
            || b.ncols() != 1
            || c_z.nrows() != 1
            || c_z.ncols() != n
            || d_z.nrows() != 1
            || d_z.ncols() != 1
            || c.ncols() != n
        {
            return Err(Error::DimensionMismatch("plant blocks are not conformable".into()));
        }
        for (m, ok) in [
            (&a, all_finite(&a)),
            (&b_w, all_finite(&b_w)),
            (&b, all_finite(&b)),
            (&c_z, all_finite(&c_z)),
            (&d_z, all_finite(&d_z)),
            (&c, all_finite(&c)),
        ] {
            let _ = m;
            if !ok {
                return Err(Error::NonFinite("plant matrices"));
            }
        }
        Ok(Plant { a, b_w, b, c_z, d_z, c })
    }

    /// The plant of the pure algorithm-design problem: the discrete-time
    /// integrator with `z = u` forwarded to the gradient.
    pub fn algorithm_design() -> Self {
        Plant {
            a: DMatrix::from_element(1, 1, 1.0),
            b_w: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::zeros(1, 1),
            c_z: DMatrix::zeros(1, 1),
            d_z: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b_w(&self) -> &DMatrix<f64> {
        &self.b_w
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c_z(&self) -> &DMatrix<f64> {
        &self.c_z
    }
    pub fn d_z(&self) -> f64 {
        self.d_z[(0, 0)]
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn measurement_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// An output-feedback controller `u = C_c x_c + D_c y`, `x_c+ = A_c x_c + B_c y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    a_c: DMatrix<f64>,
    b_c: DMatrix<f64>,
    c_c: DMatrix<f64>,
    d_c: DMatrix<f64>,
}

impl Controller {
    pub fn new(
        a_c: DMatrix<f64>,
        b_c: DMatrix<f64>,
        c_c: DMatrix<f64>,
        d_c: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = StateSpaceSys::new(a_c, b_c, c_c, d_c)?;
        if sys.output_dim() != 1 {
            return Err(Error::DimensionMismatch(
                "controller output u must be scalar per coordinate".into(),
            ));
        }
        Ok(Controller { a_c: sys.a, b_c: sys.b, c_c: sys.c, d_c: sys.d })
    }

    /// Static controller `u = d_c * y`.
    pub fn from_static(d_c: f64) -> Self {
        Controller {
            a_c: DMatrix::zeros(0, 0),
            b_c: DMatrix::zeros(0, 1),
            c_c: DMatrix::zeros(1, 0),
            d_c: DMatrix::from_element(1, 1, d_c),
        }
    }

    pub fn a_c(&self) -> &DMatrix<f64> {
        &self.a_c
    }
    pub fn b_c(&self) -> &DMatrix<f64> {
        &self.b_c
    }
    pub fn c_c(&self) -> &DMatrix<f64> {
        &self.c_c
    }
    pub fn d_c(&self) -> &DMatrix<f64> {
        &self.d_c
    }
    pub fn order(&self) -> usize {
        self.a_c.nrows()
    }
    pub fn measurement_dim(&self) -> usize {
        self.b_c.ncols()
    }

    pub fn to_sys(&self) -> StateSpaceSys {
        StateSpaceSys {
            a: self.a_c.clone(),
            b: self.b_c.clone(),
            c: self.c_c.clone(),
            d: self.d_c.clone(),
        }
    }
}

/// Closes the loop `u = controller(y)` around a plant, leaving `w -> z` open.
/// The result is the algorithm seen by the gradient nonlinearity.
pub fn close_loop(plant: &Plant, controller: &Controller) -> Result<Algorithm> {
    if controller.measurement_dim() != plant.measurement_dim() {
        return Err(Error::DimensionMismatch(format!(
            "controller expects {} measurements, plant provides {}",
            controller.measurement_dim(),
            plant.measurement_dim()
        )));
    }
    let n = plant.state_dim();
    let nc = controller.order();
    let mut a = DMatrix::zeros(n + nc, n + nc);
    a.view_mut((0, 0), (n, n))
        .copy_from(&(plant.a() + plant.b() * controller.d_c() * plant.c()));
    a.view_mut((0, n), (n, nc)).copy_from(&(plant.b() * controller.c_c()));
    a.view_mut((n, 0), (nc, n)).copy_from(&(controller.b_c() * plant.c()));
    a.view_mut((n, n), (nc, nc)).copy_from(controller.a_c());
    let mut b = DMatrix::zeros(n + nc, 1);
    b.view_mut((0, 0), (n, 1)).copy_from(plant.b_w());
    let mut c = DMatrix::zeros(1, n + nc);
    c.view_mut((0, 0), (1, n))
        .copy_from(&(plant.c_z() + DMatrix::from_element(1, 1, plant.d_z()) * controller.d_c() * plant.c()));
    c.view_mut((0, n), (1, nc))
        .copy_from(&(DMatrix::from_element(1, 1, plant.d_z()) * controller.c_c()));
    Algorithm::new(a, b, c)
}

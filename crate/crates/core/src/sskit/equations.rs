//! Sylvester and Stein equation solvers.
//!
//! Both use a Bartels-Stewart style reduction: real Schur forms bring the
//! coefficient matrices to quasi-triangular shape, the transformed equation
//! is solved block-by-block (blocks of size 1 or 2), and each small block
//! equation goes through a Kronecker linearization of size at most 4.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Solution of a linear matrix equation together with its achieved residual.
#[derive(Debug, Clone)]
pub struct EquationSolution {
    pub x: DMatrix<f64>,
    pub residual: f64,
}

/// Diagonal block partition `(start, size)` of a real quasi-triangular matrix.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Solves `M y = rhs` for a tiny square system, failing on (near) singularity.
fn solve_small(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let scale = m.amax().max(1.0);
    let svd = m.clone().svd(true, true);
    let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_sv <= 1e-13 * scale {
        return Err(Error::SharedSpectrum);
    }
    svd.solve(&rhs, 0.0)
        .map_err(|e| Error::SolverFailure(format!("small block solve failed: {e}")))
}

/// Solves `P X - X Q + R = 0` for `X`.
///
/// Requires the spectra of `P` and `Q` to be disjoint; a shared eigenvalue is
/// reported as an explicit error rather than silently least-squared away.
pub fn solve_sylvester(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<EquationSolution> {
    if !p.is_square() || !q.is_square() || r.nrows() != p.nrows() || r.ncols() != q.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "sylvester: P {}x{}, Q {}x{}, R {}x{}",
            p.nrows(),
            p.ncols(),
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let (np, nq) = (p.nrows(), q.nrows());
    if np == 0 || nq == 0 {
        return Ok(EquationSolution { x: DMatrix::zeros(np, nq), residual: 0.0 });
    }

    let scale = p.norm() + q.norm() + 1.0;
    let eig_p = p.complex_eigenvalues();
    let eig_q = q.complex_eigenvalues();
    let mut min_gap = f64::INFINITY;
    for lp in eig_p.iter() {
        for lq in eig_q.iter() {
            min_gap = min_gap.min((lp - lq).norm());
        }
    }
    if min_gap <= 1e-10 * scale {
        return Err(Error::SharedSpectrum);
    }

    let (up, sp) = p
        .clone()
        .schur()
        .unpack();
    let (uq, sq) = q
        .clone()
        .schur()
        .unpack();

    // Sp Y - Y Sq = C with Y = Up' X Uq and C = -Up' R Uq
    let c = -(up.transpose() * r * &uq);
    let pb = schur_blocks(&sp);
    let qb = schur_blocks(&sq);
    let mut y = DMatrix::<f64>::zeros(np, nq);

    for &(js, jn) in qb.iter() {
        for &(is, inn) in pb.iter().rev() {
            let mut rhs = c.view((is, js), (inn, jn)).clone_owned();
            // subtract later row blocks of Sp Y
            for &(ks, kn) in pb.iter() {
                if ks > is {
                    rhs -= sp.view((is, ks), (inn, kn)) * y.view((ks, js), (kn, jn));
                }
            }
            // add earlier column blocks of Y Sq
            for &(ls, ln) in qb.iter() {
                if ls < js {
                    rhs += y.view((is, ls), (inn, ln)) * sq.view((ls, js), (ln, jn));
                }
            }
            let sii = sp.view((is, is), (inn, inn)).clone_owned();
            let tjj = sq.view((js, js), (jn, jn)).clone_owned();
            let sys = DMatrix::identity(jn, jn).kronecker(&sii)
                - tjj.transpose().kronecker(&DMatrix::identity(inn, inn));
            let sol = solve_small(sys, vec_of(&rhs))?;
            y.view_mut((is, js), (inn, jn)).copy_from(&unvec(&sol, inn, jn));
        }
    }

    let x = &up * y * uq.transpose();
    let residual = (p * &x - &x * q + r).norm();
    let bound = 1e-10 * (p.norm() + q.norm()) * x.norm() + 1e-12;
    if residual > bound.max(1e-12) {
        return Err(Error::SolverFailure(format!(
            "sylvester residual {residual:.3e} exceeds bound {bound:.3e}"
        )));
    }
    Ok(EquationSolution { x, residual })
}

/// Solves the Stein equation `Y - F Y F' = I` for a Schur-stable `F`.
/// The solution is symmetric positive definite.
pub fn solve_stein(f: &DMatrix<f64>) -> Result<EquationSolution> {
    if !f.is_square() {
        return Err(Error::DimensionMismatch("stein: F must be square".into()));
    }
    let n = f.nrows();
    if n == 0 {
        return Ok(EquationSolution { x: DMatrix::zeros(0, 0), residual: 0.0 });
    }
    let radius = f.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    if radius >= 1.0 {
        return Err(Error::NotSchur(radius));
    }

    let (u, s) = f.clone().schur().unpack();
    let blocks = schur_blocks(&s);
    // Z - S Z S' = I with Y = U Z U'
    let c = DMatrix::<f64>::identity(n, n);
    let mut z = DMatrix::<f64>::zeros(n, n);

    for &(is, inn) in blocks.iter().rev() {
        for &(js, jn) in blocks.iter().rev() {
            let mut rhs = c.view((is, js), (inn, jn)).clone_owned();
            for &(ks, kn) in blocks.iter() {
                if ks < is {
                    continue;
                }
                for &(ls, ln) in blocks.iter() {
                    if ls < js || (ks == is && ls == js) {
                        continue;
                    }
                    rhs += sp_block(&s, is, inn, ks, kn) * z.view((ks, ls), (kn, ln))
                        * sp_block(&s, js, jn, ls, ln).transpose();
                }
            }
            let sii = s.view((is, is), (inn, inn)).clone_owned();
            let sjj = s.view((js, js), (jn, jn)).clone_owned();
            let sys = DMatrix::identity(inn * jn, inn * jn) - sjj.kronecker(&sii);
            let sol = solve_small(sys, vec_of(&rhs))?;
            z.view_mut((is, js), (inn, jn)).copy_from(&unvec(&sol, inn, jn));
        }
    }

    let mut y = &u * z * u.transpose();
    y = (&y + y.transpose()) * 0.5;
    let residual = (&y - f * &y * f.transpose() - DMatrix::identity(n, n)).norm();
    let bound = 1e-10 * (1.0 + f.norm() * f.norm()) * y.norm().max(1.0);
    if residual > bound {
        return Err(Error::SolverFailure(format!(
            "stein residual {residual:.3e} exceeds bound {bound:.3e}"
        )));
    }
    let min_eig = y
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig <= 0.0 {
        return Err(Error::SolverFailure(format!(
            "stein solution not positive definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(EquationSolution { x: y, residual })
}

fn sp_block(s: &DMatrix<f64>, rs: usize, rn: usize, cs: usize, cn: usize) -> DMatrix<f64> {
    s.view((rs, cs), (rn, cn)).clone_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sylvester_scalar_cases() {
        // P = 0, Q = rho^{-1}, R = 0  ->  X = 0
        let sol = solve_sylvester(
            &DMatrix::from_element(1, 1, 0.0),
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap();
        assert_eq!(sol.x[(0, 0)], 0.0);

        // 2X - X - 3 = 0  ->  X = 3
        let sol = solve_sylvester(
            &DMatrix::from_element(1, 1, 2.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, -3.0),
        )
        .unwrap();
        assert_relative_eq!(sol.x[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sylvester_random_4x4_meets_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let q = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(4, 4) * 5.0;
            let r = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let sol = solve_sylvester(&p, &q, &r).unwrap();
            let res = (&p * &sol.x - &sol.x * &q + &r).norm();
            let bound = 1e-10 * (p.norm() + q.norm()) * sol.x.norm() + 1e-12;
            assert!(res <= bound.max(1e-12), "residual {res} above bound {bound}");
        }
    }

    #[test]
    fn sylvester_shared_spectrum_is_an_error() {
        let p = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let r = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(solve_sylvester(&p, &q, &r), Err(Error::SharedSpectrum)));
    }

    #[test]
    fn sylvester_empty_dimensions() {
        let sol = solve_sylvester(
            &DMatrix::zeros(0, 0),
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::zeros(0, 1),
        )
        .unwrap();
        assert_eq!(sol.x.nrows(), 0);
        assert_eq!(sol.x.ncols(), 1);
    }

    #[test]
    fn stein_scalar_and_zero_cases() {
        let sol = solve_stein(&DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert_relative_eq!(sol.x[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);

        let sol = solve_stein(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(sol.x, DMatrix::identity(2, 2));
    }

    #[test]
    fn stein_random_schur_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut f = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let radius = f.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
            f /= radius * 1.25 + 0.1;
            let sol = solve_stein(&f).unwrap();
            let min_eig = sol
                .x
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig > 0.0);
            assert!(sol.residual <= 1e-10 * sol.x.norm().max(1.0) * (1.0 + f.norm() * f.norm()));
        }
    }

    #[test]
    fn stein_rejects_unstable_input() {
        assert!(matches!(
            solve_stein(&DMatrix::from_element(1, 1, 1.0)),
            Err(Error::NotSchur(_))
        ));
    }
}

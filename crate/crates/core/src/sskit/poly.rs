//! Small polynomial utilities: characteristic polynomials, matrix polynomial
//! evaluation and root finding via companion matrices.
//!
//! Coefficient slices are always low order first; a monic polynomial of
//! degree `l` has `l + 1` entries ending in `1.0`.

use crate::error::{Error, Result};
use crate::sskit::companion;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Coefficients of `det(zI - A)` via the Faddeev-LeVerrier recursion,
/// low order first and monic. Adequate for the small orders used here.
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    if n == 0 {
        return coeffs;
    }
    let mut m = DMatrix::<f64>::identity(n, n); // M_{n-1}
    for k in 1..=n {
        let am = a * &m;
        let c = -am.trace() / k as f64; // coefficient of z^{n-k}
        coeffs[n - k] = c;
        if k < n {
            m = am + DMatrix::identity(n, n) * c;
        }
    }
    coeffs
}

/// Evaluates a polynomial at a square matrix by Horner's scheme.
pub fn eval_matrix(coeffs: &[f64], a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for &c in coeffs.iter().rev() {
        acc = a * acc;
        for i in 0..n {
            acc[(i, i)] += c;
        }
    }
    acc
}

/// Evaluates a polynomial at a complex scalar.
pub fn eval_complex(coeffs: &[f64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * z + c;
    }
    acc
}

/// Numerator polynomial of the SISO transfer function
/// `c (zI - a)^{-1} b + d`, i.e. `d·char(a) + c·adj(zI - a)·b`, low order
/// first with degree `n`. Its roots are the invariant zeros of a minimal
/// realization.
pub fn siso_numerator(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: f64) -> Vec<f64> {
    let n = a.nrows();
    let p = char_poly(a);
    let mut num: Vec<f64> = p.iter().map(|v| v * d).collect();
    if n == 0 {
        return num;
    }
    // Faddeev sequence: adj(zI - A) = sum_k M_k z^k with M_{n-1} = I and
    // M_{k-1} = A M_k + p_k I
    let mut m = DMatrix::<f64>::identity(n, n);
    for k in (0..n).rev() {
        num[k] += (c * &m * b)[(0, 0)];
        if k > 0 {
            m = a * &m + DMatrix::identity(n, n) * p[k];
        }
    }
    num
}

/// Roots of a real polynomial as eigenvalues of its companion matrix.
/// Leading coefficients that vanish relative to the largest one are trimmed.
pub fn roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let scale = coeffs.iter().fold(0.0_f64, |s, c| s.max(c.abs()));
    if scale == 0.0 {
        return Err(Error::InvalidInput("zero polynomial has no well-defined roots".into()));
    }
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && c.last().unwrap().abs() <= 1e-12 * scale {
        c.pop();
    }
    let degree = c.len() - 1;
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = *c.last().unwrap();
    for v in c.iter_mut() {
        *v /= lead;
    }
    let comp = companion(&c)?;
    Ok(comp.complex_eigenvalues().iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn char_poly_of_known_matrix() {
        // z^2 - 3z + 2 = (z-1)(z-2)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let p = char_poly(&a);
        assert_relative_eq!(p[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], -3.0, epsilon = 1e-12);
        assert_relative_eq!(p[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_matrix_cayley_hamilton() {
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 1.0, -0.5, 0.0, -0.3, 1.0, 0.4, 0.0, 0.1]);
        let p = char_poly(&a);
        let z = eval_matrix(&p, &a);
        assert!(z.amax() < 1e-12);
    }

    #[test]
    fn roots_of_quadratic() {
        let mut rs = roots(&[-2.0, 1.0, 1.0]).unwrap(); // (z+2)(z-1)
        rs.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert_relative_eq!(rs[0].re, -2.0, epsilon = 1e-10);
        assert_relative_eq!(rs[1].re, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn roots_trims_vanishing_leading_coefficients() {
        let rs = roots(&[-1.0, 1.0, 0.0]).unwrap();
        assert_eq!(rs.len(), 1);
        assert_relative_eq!(rs[0].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn siso_numerator_matches_transfer_values() {
        use crate::sskit::{transfer_eval, StateSpaceSys};
        let a = DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -0.4, 0.5]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[0.7, 0.3]);
        let d = 2.0;
        let num = siso_numerator(&a, &b, &c, d);
        let den = char_poly(&a);
        let sys = StateSpaceSys::new(a, b, c, DMatrix::from_element(1, 1, d)).unwrap();
        for k in 0..4 {
            let z = Complex64::new(1.5 + 0.2 * k as f64, 0.4);
            let g = transfer_eval(&sys, z).unwrap()[(0, 0)];
            let expected = eval_complex(&num, z) / eval_complex(&den, z);
            assert!((g - expected).norm() <= 1e-10 * g.norm().max(1.0));
        }
    }
}

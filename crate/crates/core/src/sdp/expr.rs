//! Affine matrix expressions over scalar decision variables.
//!
//! An expression is a constant matrix plus one coefficient matrix per scalar
//! variable it touches. Only affine operations are provided; multiplying two
//! non-constant expressions is a programming error and panics.

use nalgebra::DMatrix;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl MatExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        MatExpr { rows: m.nrows(), cols: m.ncols(), constant: m, terms: BTreeMap::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub(crate) fn from_terms(
        rows: usize,
        cols: usize,
        constant: DMatrix<f64>,
        terms: BTreeMap<usize, DMatrix<f64>>,
    ) -> Self {
        MatExpr { rows, cols, constant, terms }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }
    pub(crate) fn terms(&self) -> &BTreeMap<usize, DMatrix<f64>> {
        &self.terms
    }

    pub fn add(&self, other: &MatExpr) -> MatExpr {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "MatExpr::add shape");
        let mut terms = self.terms.clone();
        for (k, m) in &other.terms {
            terms
                .entry(*k)
                .and_modify(|t| *t += m)
                .or_insert_with(|| m.clone());
        }
        MatExpr { rows: self.rows, cols: self.cols, constant: &self.constant + &other.constant, terms }
    }

    pub fn sub(&self, other: &MatExpr) -> MatExpr {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> MatExpr {
        MatExpr {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(k, m)| (*k, m * s)).collect(),
        }
    }

    /// `M * self` for a constant `M`.
    pub fn lmul(&self, m: &DMatrix<f64>) -> MatExpr {
        assert_eq!(m.ncols(), self.rows, "MatExpr::lmul shape");
        MatExpr {
            rows: m.nrows(),
            cols: self.cols,
            constant: m * &self.constant,
            terms: self.terms.iter().map(|(k, t)| (*k, m * t)).collect(),
        }
    }

    /// `self * M` for a constant `M`.
    pub fn rmul(&self, m: &DMatrix<f64>) -> MatExpr {
        assert_eq!(self.cols, m.nrows(), "MatExpr::rmul shape");
        MatExpr {
            rows: self.rows,
            cols: m.ncols(),
            constant: &self.constant * m,
            terms: self.terms.iter().map(|(k, t)| (*k, t * m)).collect(),
        }
    }

    /// Product of two expressions, at most one of which carries variables.
    pub fn mul(&self, other: &MatExpr) -> MatExpr {
        if other.is_constant() {
            self.rmul(&other.constant)
        } else if self.is_constant() {
            other.lmul(&self.constant)
        } else {
            panic!("MatExpr::mul of two non-constant expressions is not affine");
        }
    }

    pub fn transpose(&self) -> MatExpr {
        MatExpr {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(k, t)| (*k, t.transpose())).collect(),
        }
    }

    /// Congruence with a constant: `M' * self * M`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> MatExpr {
        self.lmul(&m.transpose()).rmul(m)
    }

    /// `self * other' + other * self'` for a constant `other`; the symmetric
    /// cross term pairing a variable column block with a constant one.
    pub fn sym_outer_with(&self, other: &DMatrix<f64>) -> MatExpr {
        let a = self.rmul(&other.transpose());
        a.add(&a.transpose())
    }

    pub fn hstack(parts: &[&MatExpr]) -> MatExpr {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut constant = DMatrix::zeros(rows, cols);
        let mut terms: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        let mut off = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "MatExpr::hstack row mismatch");
            constant.view_mut((0, off), (rows, p.cols)).copy_from(&p.constant);
            for (k, t) in &p.terms {
                terms
                    .entry(*k)
                    .or_insert_with(|| DMatrix::zeros(rows, cols))
                    .view_mut((0, off), (rows, p.cols))
                    .copy_from(t);
            }
            off += p.cols;
        }
        MatExpr { rows, cols, constant, terms }
    }

    pub fn vstack(parts: &[&MatExpr]) -> MatExpr {
        assert!(!parts.is_empty());
        let cols = parts[0].cols;
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut constant = DMatrix::zeros(rows, cols);
        let mut terms: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        let mut off = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "MatExpr::vstack col mismatch");
            constant.view_mut((off, 0), (p.rows, cols)).copy_from(&p.constant);
            for (k, t) in &p.terms {
                terms
                    .entry(*k)
                    .or_insert_with(|| DMatrix::zeros(rows, cols))
                    .view_mut((off, 0), (p.rows, cols))
                    .copy_from(t);
            }
            off += p.rows;
        }
        MatExpr { rows, cols, constant, terms }
    }

    /// Builds a block matrix from a rectangular grid of expressions.
    pub fn block(grid: &[Vec<&MatExpr>]) -> MatExpr {
        let rows: Vec<MatExpr> = grid.iter().map(|r| MatExpr::hstack(r)).collect();
        MatExpr::vstack(&rows.iter().collect::<Vec<_>>())
    }

    /// Evaluates the expression at a scalar assignment.
    pub fn eval(&self, assignment: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, t) in &self.terms {
            out += t * assignment[*k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(idx: usize, rows: usize, cols: usize, coeff: DMatrix<f64>) -> MatExpr {
        let mut terms = BTreeMap::new();
        terms.insert(idx, coeff);
        MatExpr::from_terms(rows, cols, DMatrix::zeros(rows, cols), terms)
    }

    #[test]
    fn affine_algebra_evaluates_correctly() {
        let x = var(0, 2, 2, DMatrix::identity(2, 2));
        let c = MatExpr::constant(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let e = x.scale(3.0).add(&c).transpose();
        let v = e.eval(&[2.0]);
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[7.0, 3.0, 2.0, 10.0]));
    }

    #[test]
    fn congruence_and_stacking() {
        let x = var(0, 2, 2, DMatrix::identity(2, 2));
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let q = x.congruence(&m); // 1x1: sum of entries of x-coefficient
        assert_eq!(q.eval(&[1.5])[(0, 0)], 3.0);

        let b = MatExpr::block(&[vec![&x, &x], vec![&x, &x]]);
        assert_eq!(b.rows(), 4);
        let mut expected = DMatrix::zeros(4, 4);
        for bi in 0..2 {
            for bj in 0..2 {
                for k in 0..2 {
                    expected[(bi * 2 + k, bj * 2 + k)] = 1.0;
                }
            }
        }
        assert_eq!(b.eval(&[1.0]), expected);
    }

    #[test]
    #[should_panic(expected = "not affine")]
    fn product_of_two_variable_expressions_panics() {
        let x = var(0, 1, 1, DMatrix::identity(1, 1));
        let y = var(1, 1, 1, DMatrix::identity(1, 1));
        let _ = x.mul(&y);
    }
}

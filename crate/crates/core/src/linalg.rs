//! Small least-squares toolkit over nalgebra's Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::error::{Block, Error, Result};

/// Relative threshold on `|R_jj|` for declaring a column dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Condition estimates at or above this trigger a diagnostics warning.
pub const ILL_CONDITIONED: f64 = 1e12;

/// `[1 | x | w]`, or `[1 | x]` when `w` is `None`.
pub fn design_matrix(x: &DMatrix<f64>, w: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let n = x.nrows();
    let k = w.map_or(0, |w| w.ncols());
    let mut d = DMatrix::<f64>::zeros(n, 1 + x.ncols() + k);
    d.column_mut(0).fill(1.0);
    d.columns_mut(1, x.ncols()).copy_from(x);
    if let Some(w) = w {
        d.columns_mut(1 + x.ncols(), k).copy_from(w);
    }
    d
}

/// Block and in-block column index of design column `j` for `[1 | x | w]`.
pub(crate) fn locate_column(j: usize, m: usize) -> (Block, usize) {
    match j {
        0 => (Block::Intercept, 0),
        j if j <= m => (Block::Treatment, j - 1),
        j => (Block::Controls, j - 1 - m),
    }
}

/// Full-column-rank least-squares problem `min ||A b - y||`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Thin orthonormal factor, n x p.
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LeastSquares {
    /// Factor `a`, which is laid out as `[1 | x | w]` with `m` treatment columns.
    pub fn new(a: DMatrix<f64>, m: usize) -> Result<Self> {
        Self::with_labels(a, |j| locate_column(j, m))
    }

    /// Factor `a`, naming a dependent column `j` by `label(j)`.
    pub fn with_labels(a: DMatrix<f64>, label: impl Fn(usize) -> (Block, usize)) -> Result<Self> {
        let (nrows, ncols) = a.shape();
        if nrows < ncols {
            return Err(Error::Dimension(format!(
                "need at least as many observations as regressors: n = {nrows} < {ncols}"
            )));
        }
        let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
        let (q, r) = a.qr().unpack();
        for j in 0..ncols {
            let d = r[(j, j)].abs();
            if !(d > RANK_TOL * scale) {
                let (block, column) = label(j);
                return Err(Error::RankDeficient { block, column });
            }
        }
        Ok(Self { q, r })
    }

    pub fn ncols(&self) -> usize {
        self.r.ncols()
    }

    /// Ratio of largest to smallest `|R_jj|`; a cheap lower bound on the
    /// 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.r.diagonal().map(f64::abs);
        d.max() / d.min()
    }

    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        self.r
            .solve_upper_triangular(&self.q.tr_mul(y))
            .expect("diagonal of R checked non-zero at construction")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.r
            .solve_upper_triangular(&self.q.tr_mul(b))
            .expect("diagonal of R checked non-zero at construction")
    }

    /// `y - Q Q' y`.
    pub fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.q * self.q.tr_mul(y)
    }

    pub fn residual_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        b - &self.q * self.q.tr_mul(b)
    }
}

/// `z' M z` for symmetric `M`.
pub fn quad_form(m: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    (m * z).dot(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exact_system() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 5.0, 8.0]);
        let a = design_matrix(&x, None);
        let y = DVector::from_fn(5, |i, _| 2.0 - 0.5 * x[(i, 0)]);
        let ls = LeastSquares::new(a, 1).unwrap();
        let b = ls.solve(&y);
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 0.5).abs() < 1e-12);
        assert!(ls.residual(&y).norm() < 1e-12);
    }

    #[test]
    fn reports_dependent_block() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 5.0, 8.0]);
        let w = DMatrix::from_fn(5, 2, |i, j| {
            if j == 0 {
                (i * i) as f64
            } else {
                3.0 * x[(i, 0)] - 1.0
            }
        });
        match LeastSquares::new(design_matrix(&x, Some(&w)), 1) {
            Err(Error::RankDeficient {
                block: Block::Controls,
                column: 1,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let constant_x = DMatrix::from_element(5, 1, 4.0);
        assert!(matches!(
            LeastSquares::new(design_matrix(&constant_x, None), 1),
            Err(Error::RankDeficient {
                block: Block::Treatment,
                column: 0
            })
        ));
    }
}

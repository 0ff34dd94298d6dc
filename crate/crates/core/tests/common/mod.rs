#![allow(dead_code)]

pub mod identities;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use shrinkreg::model::RegressionData;
use shrinkreg::rng::{substream, Domain};

/// Dense matrix over exact rationals, row-major.
#[derive(Clone, Debug)]
pub struct RatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<BigRational>,
}

impl RatMatrix {
    pub fn from_f64(a: &DMatrix<f64>) -> Self {
        let (rows, cols) = a.shape();
        let data = (0..rows * cols)
            .map(|i| BigRational::from_float(a[(i / cols, i % cols)]).expect("finite"))
            .collect();
        Self { rows, cols, data }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self::from_f64(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = BigRational::one();
        }
        m
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![BigRational::zero(); rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j).clone();
            }
        }
        t
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(l, j);
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Solve `self X = rhs` by Gauss-Jordan elimination with exact pivots.
    pub fn solve(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let c = rhs.cols;
        let mut a = self.clone();
        let mut b = rhs.clone();
        for col in 0..n {
            let pivot = (col..n)
                .find(|&r| !a.get(r, col).is_zero())
                .expect("singular system");
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                for j in 0..c {
                    b.data.swap(pivot * c + j, col * c + j);
                }
            }
            let inv = BigRational::one() / a.get(col, col).clone();
            for j in 0..n {
                a.data[col * n + j] *= &inv;
            }
            for j in 0..c {
                b.data[col * c + j] *= &inv;
            }
            for r in 0..n {
                if r == col || a.get(r, col).is_zero() {
                    continue;
                }
                let f = a.get(r, col).clone();
                for j in 0..n {
                    let v = &f * a.get(col, j);
                    a.data[r * n + j] -= v;
                }
                for j in 0..c {
                    let v = &f * b.get(col, j);
                    b.data[r * c + j] -= v;
                }
            }
        }
        b
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            self.get(i, j).to_f64().expect("representable")
        })
    }

    pub fn column_f64(&self) -> DVector<f64> {
        assert_eq!(self.cols, 1);
        DVector::from_iterator(self.rows, self.data.iter().map(|v| v.to_f64().unwrap()))
    }

    pub fn scalar(&self) -> BigRational {
        assert_eq!((self.rows, self.cols), (1, 1));
        self.data[0].clone()
    }
}

pub fn rat(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn abs_f64(v: &BigRational) -> f64 {
    v.abs().to_f64().unwrap()
}

/// `[1 | x | w]` over the rationals.
pub fn rat_design(x: &DMatrix<f64>, w: Option<&DMatrix<f64>>) -> RatMatrix {
    let n = x.nrows();
    let k = w.map_or(0, |w| w.ncols());
    let mut d = DMatrix::from_element(n, 1 + x.ncols() + k, 1.0);
    d.columns_mut(1, x.ncols()).copy_from(x);
    if let Some(w) = w {
        d.columns_mut(1 + x.ncols(), k).copy_from(w);
    }
    RatMatrix::from_f64(&d)
}

/// Exact least-squares coefficients from the normal equations.
pub fn rat_least_squares(a: &RatMatrix, y: &RatMatrix) -> RatMatrix {
    let at = a.transpose();
    at.mul(a).solve(&at.mul(y))
}

/// Exact residual maker `I - A (A'A)^{-1} A'`.
pub fn rat_residual_maker(a: &RatMatrix) -> RatMatrix {
    let at = a.transpose();
    let proj = a.mul(&at.mul(a).solve(&at));
    RatMatrix::identity(a.rows).sub(&proj)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// `|a - b| <= tol * max(1, |b|)` componentwise.
pub fn assert_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    let scale = b.amax().max(1.0);
    let d = max_abs_diff(a, b);
    assert!(
        d <= tol * scale,
        "{what}: max diff {d:e} > {tol:e} * {scale}\n  got {a}\n  want {b}"
    );
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let v: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &v)
}

pub fn normal_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// A generic regression dataset with correlated regressors and unit noise.
pub fn random_data(seed: u64, n: usize, m: usize, k: usize) -> RegressionData {
    let mut rng = substream(seed, Domain::Auxiliary, 99);
    let x = normal_matrix(&mut rng, n, m);
    let mix = normal_matrix(&mut rng, m, k) * 0.5;
    let w = &x * mix + normal_matrix(&mut rng, n, k) + DMatrix::from_element(n, k, 0.3);
    let beta = normal_vector(&mut rng, m);
    let gamma = normal_vector(&mut rng, k) * 0.4;
    let y = &x * beta + &w * gamma + normal_vector(&mut rng, n) + DVector::from_element(n, 1.5);
    RegressionData::new(y, x, w).unwrap()
}

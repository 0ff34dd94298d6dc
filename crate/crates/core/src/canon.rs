//! Structure-preserving orthonormal basis and the canonical Normal-means form.
//!
//! The basis `q = (q1, qx, qw, qr)` is nested: `q1` spans the constant,
//! `(q1, qx)` spans `(1, x)` and `(q1, qx, qw)` spans `(1, x, w)`. A
//! column-by-column Householder QR of `[1 | x | w]` produces exactly this
//! nesting (the constant first, then `x` projected off the constant, then `w`
//! projected off both), and the remaining reflector columns complete it to an
//! orthonormal basis of R^n.
//!
//! Rotating the outcome by `q'` turns the regression into a means problem:
//! `Y*_x ~ N(mu_x + a mu_w, s2)`, `Y*_w ~ N(mu_w, s2)`, `Y*_r ~ N(0, s2)` with
//! `mu_x = qx' x beta`, `mu_w = qw' w gamma` and `a = qx' w (qw' w)^{-1}`.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{design_matrix, locate_column, RANK_TOL};

/// Full Householder QR: returns `(Q, R)` with `Q` n x n orthogonal and `R`
/// n x p upper triangular with non-negative diagonal.
pub fn householder_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = a.shape();
    let mut r = a.clone();
    let mut reflectors: Vec<Option<DVector<f64>>> = Vec::with_capacity(p.min(n));
    for j in 0..p.min(n) {
        let x = r.view((j, j), (n - j, 1)).column(0).into_owned();
        let norm = x.norm();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vv = v.norm_squared();
        if vv == 0.0 {
            reflectors.push(None);
            continue;
        }
        // R[j.., j..] -= (2 / v'v) v (v' R[j.., j..])
        let mut block = r.view_mut((j, j), (n - j, p - j));
        let proj = block.tr_mul(&v) * (2.0 / vv);
        block.ger(-1.0, &v, &proj, 1.0);
        for i in j + 1..n {
            r[(i, j)] = 0.0;
        }
        reflectors.push(Some(v));
    }

    let mut q = DMatrix::<f64>::identity(n, n);
    for (j, v) in reflectors.iter().enumerate().rev() {
        if let Some(v) = v {
            let vv = v.norm_squared();
            let mut block = q.view_mut((j, 0), (n - j, n));
            let proj = block.tr_mul(v) * (2.0 / vv);
            block.ger(-1.0, v, &proj, 1.0);
        }
    }

    for j in 0..p.min(n) {
        if r[(j, j)] < 0.0 {
            r.row_mut(j).neg_mut();
            q.column_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis `[q1 | qx | qw | qr]` adapted to the design `(1, x, w)`.
#[derive(Debug, Clone)]
pub struct CanonicalBasis {
    q: DMatrix<f64>,
    m: usize,
    k: usize,
}

impl CanonicalBasis {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn k(&self) -> usize {
        self.k
    }
    /// `n - 1 - m`, the dimension of the orthogonal complement of `(1, x)`.
    pub fn s(&self) -> usize {
        self.n() - 1 - self.m
    }

    /// The full n x n orthonormal matrix.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn q1(&self) -> DVector<f64> {
        self.q.column(0).into_owned()
    }
    pub fn qx(&self) -> DMatrixView<'_, f64> {
        self.q.columns(1, self.m)
    }
    pub fn qw(&self) -> DMatrixView<'_, f64> {
        self.q.columns(1 + self.m, self.k)
    }
    pub fn qr(&self) -> DMatrixView<'_, f64> {
        let start = 1 + self.m + self.k;
        self.q.columns(start, self.n() - start)
    }
    /// `[qw | qr]`.
    pub fn qperp(&self) -> DMatrixView<'_, f64> {
        self.q.columns(1 + self.m, self.s())
    }

    /// Canonical coordinates `(qx' y, qperp' y, qx' w, qperp' w)` of a sample.
    pub fn sample(&self, y: &DVector<f64>, w: &DMatrix<f64>) -> Result<CanonicalSample> {
        if y.len() != self.n() || w.nrows() != self.n() {
            return Err(Error::Dimension("sample rows do not match basis".into()));
        }
        Ok(CanonicalSample {
            yx: self.qx().tr_mul(y),
            yperp: self.qperp().tr_mul(y),
            wx: self.qx().tr_mul(w),
            wperp: self.qperp().tr_mul(w),
        })
    }
}

/// Build the basis for `(1, x, w)`.
///
/// Fails when `[1 | x | w]` has numerical rank below `1 + m + k`, at relative
/// threshold 1e-10 of its largest singular value, naming the first dependent
/// column.
pub fn build_basis(x: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<CanonicalBasis> {
    let (n, m, k) = (x.nrows(), x.ncols(), w.ncols());
    if w.nrows() != n {
        return Err(Error::Dimension(format!(
            "x has {n} rows, w has {}",
            w.nrows()
        )));
    }
    if m == 0 {
        return Err(Error::Dimension("x must have at least one column".into()));
    }
    if n < 1 + m + k {
        return Err(Error::Dimension(format!(
            "need n >= 1 + m + k = {}, got n = {n}",
            1 + m + k
        )));
    }
    let design = design_matrix(x, Some(w));
    let singular = design.clone().singular_values();
    let tol = RANK_TOL * singular.max();
    let (q, r) = householder_qr(&design);
    let diag: Vec<f64> = (0..1 + m + k).map(|j| r[(j, j)]).collect();
    if let Some(j) = diag.iter().position(|&d| !(d > tol)) {
        let (block, column) = locate_column(j, m);
        return Err(Error::RankDeficient { block, column });
    }
    if singular.min() <= tol {
        let j = (0..diag.len())
            .min_by(|&a, &b| diag[a].total_cmp(&diag[b]))
            .unwrap_or(0);
        let (block, column) = locate_column(j, m);
        return Err(Error::RankDeficient { block, column });
    }
    Ok(CanonicalBasis { q, m, k })
}

/// The rotated outcome and the design blocks needed to map means back to
/// coefficients.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub y_star_1: f64,
    pub y_star_x: DVector<f64>,
    pub y_star_w: DVector<f64>,
    pub y_star_r: DVector<f64>,
    /// `qx' w (qw' w)^{-1}`, m x k.
    pub a: DMatrix<f64>,
    /// `qx' x`, m x m upper triangular.
    pub qx_x: DMatrix<f64>,
    pub qx_w: DMatrix<f64>,
    pub qw_w: DMatrix<f64>,
    /// 2-norm condition number of `qx_x`.
    pub qx_x_condition: f64,
}

impl CanonicalForm {
    /// Two-step estimate `beta = (qx' x)^{-1} (Y*_x - a mu_w_hat)`.
    pub fn two_step_beta(&self, mu_w_hat: &DVector<f64>) -> Result<DVector<f64>> {
        let mu_x = &self.y_star_x - &self.a * mu_w_hat;
        self.qx_x
            .clone()
            .lu()
            .solve(&mu_x)
            .ok_or_else(|| Error::Singular("qx' x is singular".into()))
    }

    /// `||Y*||^2` summed over all blocks.
    pub fn norm_squared(&self) -> f64 {
        self.y_star_1 * self.y_star_1
            + self.y_star_x.norm_squared()
            + self.y_star_w.norm_squared()
            + self.y_star_r.norm_squared()
    }

    /// `Y = q Y*`.
    pub fn reconstruct(&self, basis: &CanonicalBasis) -> DVector<f64> {
        let mut ystar = DVector::zeros(basis.n());
        ystar[0] = self.y_star_1;
        let (m, k) = (self.y_star_x.len(), self.y_star_w.len());
        ystar.rows_mut(1, m).copy_from(&self.y_star_x);
        ystar.rows_mut(1 + m, k).copy_from(&self.y_star_w);
        ystar
            .rows_mut(1 + m + k, self.y_star_r.len())
            .copy_from(&self.y_star_r);
        basis.q() * ystar
    }
}

/// Rotate `y` into canonical coordinates.
pub fn transform(
    y: &DVector<f64>,
    basis: &CanonicalBasis,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<CanonicalForm> {
    let n = basis.n();
    if y.len() != n || x.shape() != (n, basis.m()) || w.shape() != (n, basis.k()) {
        return Err(Error::Dimension(
            "data dimensions do not match the basis".into(),
        ));
    }
    let ystar = basis.q().tr_mul(y);
    let (m, k) = (basis.m(), basis.k());
    let qx_x = basis.qx().tr_mul(x);
    let qx_w = basis.qx().tr_mul(w);
    let qw_w = basis.qw().tr_mul(w);
    // a' = (qw' w)'^{-1} (qx' w)'
    let a = qw_w
        .transpose()
        .lu()
        .solve(&qx_w.transpose())
        .ok_or_else(|| Error::Singular("qw' w is singular".into()))?
        .transpose();
    let sv = qx_x.clone().singular_values();
    Ok(CanonicalForm {
        y_star_1: ystar[0],
        y_star_x: ystar.rows(1, m).into_owned(),
        y_star_w: ystar.rows(1 + m, k).into_owned(),
        y_star_r: ystar.rows(1 + m + k, n - 1 - m - k).into_owned(),
        a,
        qx_x,
        qx_w,
        qw_w,
        qx_x_condition: sv.max() / sv.min(),
    })
}

/// Sample in canonical coordinates, `(y_x, y_perp, w_x, w_perp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSample {
    pub yx: DVector<f64>,
    pub yperp: DVector<f64>,
    pub wx: DMatrix<f64>,
    pub wperp: DMatrix<f64>,
}

impl CanonicalSample {
    fn check(&self, m: usize, k: usize, s: usize) -> Result<()> {
        if self.yx.len() != m
            || self.yperp.len() != s
            || self.wx.shape() != (m, k)
            || self.wperp.shape() != (s, k)
        {
            return Err(Error::Dimension(format!(
                "canonical sample does not match (m, k, s) = ({m}, {k}, {s})"
            )));
        }
        Ok(())
    }
}

/// Parameter `theta = (mu_x, gamma)` of the canonical joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub mu_x: DVector<f64>,
    pub gamma: DVector<f64>,
}

/// Mean of `(y_x, y_perp)` given the controls: `(mu_x + w_x gamma, w_perp gamma)`.
pub fn conditional_mean(theta: &Theta, sample: &CanonicalSample) -> (DVector<f64>, DVector<f64>) {
    (
        &theta.mu_x + &sample.wx * &theta.gamma,
        &sample.wperp * &theta.gamma,
    )
}

/// Element `(g_mu, g_x, g_w, g_perp)` of `R^m x O(m) x O(k) x O(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub g_mu: DVector<f64>,
    pub g_x: DMatrix<f64>,
    pub g_w: DMatrix<f64>,
    pub g_perp: DMatrix<f64>,
}

impl GroupElement {
    pub fn identity(m: usize, k: usize, s: usize) -> Self {
        Self {
            g_mu: DVector::zeros(m),
            g_x: DMatrix::identity(m, m),
            g_w: DMatrix::identity(k, k),
            g_perp: DMatrix::identity(s, s),
        }
    }

    /// Haar-random rotations with a standard-normal translation.
    pub fn random<R: Rng + ?Sized>(m: usize, k: usize, s: usize, rng: &mut R) -> Self {
        Self {
            g_mu: DVector::from_fn(m, |_, _| rng.sample(StandardNormal)),
            g_x: random_orthogonal(m, rng),
            g_w: random_orthogonal(k, rng),
            g_perp: random_orthogonal(s, rng),
        }
    }

    /// Orthogonality of each rotation block to 1e-12 per entry.
    pub fn validate(&self) -> Result<()> {
        let m = self.g_mu.len();
        if self.g_x.shape() != (m, m) || !self.g_w.is_square() || !self.g_perp.is_square() {
            return Err(Error::Dimension(
                "group element blocks have inconsistent shapes".into(),
            ));
        }
        for (name, g) in [
            ("g_x", &self.g_x),
            ("g_w", &self.g_w),
            ("g_perp", &self.g_perp),
        ] {
            let dev = (g.tr_mul(g) - DMatrix::identity(g.nrows(), g.nrows())).amax();
            if dev > 1e-12 {
                return Err(Error::config(
                    name,
                    format!("not orthogonal (max deviation {dev:e})"),
                ));
            }
        }
        Ok(())
    }

    /// `self ∘ other`: acting by the result equals acting by `other`, then `self`.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            g_mu: &self.g_x * &other.g_mu + &self.g_mu,
            g_x: &self.g_x * &other.g_x,
            g_w: &self.g_w * &other.g_w,
            g_perp: &self.g_perp * &other.g_perp,
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal absorbed.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    if dim == 0 {
        return DMatrix::zeros(0, 0);
    }
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    householder_qr(&g).0
}

/// Unique symmetric positive-definite square root and its inverse.
#[derive(Debug, Clone)]
pub struct SymmetricRoot {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

impl SymmetricRoot {
    /// Eigendecomposition with eigenvalues clamped at `1e-14 * max`.
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::Dimension("square root needs a square matrix".into()));
        }
        crate::model::check_symmetric(sigma).map_err(|r| Error::config("sigma_w", r))?;
        let eig = SymmetricEigen::new(sigma.clone());
        let max = eig.eigenvalues.max();
        if !(max > 0.0) || eig.eigenvalues.min() <= 0.0 {
            let minor = crate::model::cholesky_sqrt(sigma)
                .err()
                .and_then(|e| match e {
                    Error::NotPositiveDefinite { minor } => Some(minor),
                    _ => None,
                });
            return Err(Error::NotPositiveDefinite {
                minor: minor.unwrap_or(sigma.nrows()),
            });
        }
        let floor = 1e-14 * max;
        let vals = eig.eigenvalues.map(|l| l.max(floor));
        let v = &eig.eigenvectors;
        let sqrt = v * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * v.transpose();
        let inv_sqrt = v * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l.sqrt())) * v.transpose();
        Ok(Self { sqrt, inv_sqrt })
    }

    /// `S^{-1/2} g' S^{1/2}`, the right factor applied to control blocks.
    pub fn conjugate_transpose(&self, g_w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.inv_sqrt * g_w.transpose() * &self.sqrt
    }

    /// `S^{-1/2} g S^{1/2}`, applied to `gamma`.
    pub fn conjugate(&self, g_w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.inv_sqrt * g_w * &self.sqrt
    }
}

/// Actions of the group on samples, parameters and decisions for a fixed
/// control covariance.
#[derive(Debug, Clone)]
pub struct GroupAction {
    root: SymmetricRoot,
}

impl GroupAction {
    pub fn new(sigma_w: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            root: SymmetricRoot::new(sigma_w)?,
        })
    }

    pub fn root(&self) -> &SymmetricRoot {
        &self.root
    }

    fn check(&self, g: &GroupElement, m: usize, k: usize, s: usize) -> Result<()> {
        if g.g_mu.len() != m || g.g_x.nrows() != m || g.g_w.nrows() != k || g.g_perp.nrows() != s {
            return Err(Error::Dimension(format!(
                "group element shape does not match (m, k, s) = ({m}, {k}, {s})"
            )));
        }
        if self.root.sqrt.nrows() != k {
            return Err(Error::Dimension("sigma_w does not match k".into()));
        }
        Ok(())
    }

    /// Sample-space action:
    /// `(g_x y_x + g_mu, g_perp y_perp, g_x w_x T, g_perp w_perp T)` with
    /// `T = S^{-1/2} g_w' S^{1/2}`.
    pub fn on_sample(&self, g: &GroupElement, z: &CanonicalSample) -> Result<CanonicalSample> {
        let (m, k, s) = (z.yx.len(), z.wx.ncols(), z.yperp.len());
        z.check(m, k, s)?;
        self.check(g, m, k, s)?;
        let t = self.root.conjugate_transpose(&g.g_w);
        Ok(CanonicalSample {
            yx: &g.g_x * &z.yx + &g.g_mu,
            yperp: &g.g_perp * &z.yperp,
            wx: &g.g_x * &z.wx * &t,
            wperp: &g.g_perp * &z.wperp * &t,
        })
    }

    /// Parameter action `(g_x mu_x + g_mu, S^{-1/2} g_w S^{1/2} gamma)`.
    pub fn on_params(&self, g: &GroupElement, theta: &Theta) -> Result<Theta> {
        let (m, k) = (theta.mu_x.len(), theta.gamma.len());
        self.check(g, m, k, g.g_perp.nrows())?;
        Ok(Theta {
            mu_x: &g.g_x * &theta.mu_x + &g.g_mu,
            gamma: self.root.conjugate(&g.g_w) * &theta.gamma,
        })
    }

    /// Decision action `g_x a + g_mu`.
    pub fn on_action(&self, g: &GroupElement, a: &DVector<f64>) -> DVector<f64> {
        &g.g_x * a + &g.g_mu
    }
}

pub fn apply_group_data(
    g: &GroupElement,
    sample: &CanonicalSample,
    sigma_w: &DMatrix<f64>,
) -> Result<CanonicalSample> {
    GroupAction::new(sigma_w)?.on_sample(g, sample)
}

pub fn apply_group_params(
    g: &GroupElement,
    theta: &Theta,
    sigma_w: &DMatrix<f64>,
) -> Result<Theta> {
    GroupAction::new(sigma_w)?.on_params(g, theta)
}

/// Squared-error loss `||mu_x - a||^2`.
pub fn canonical_loss(theta: &Theta, a: &DVector<f64>) -> f64 {
    (&theta.mu_x - a).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    #[test]
    fn already_orthogonal_columns() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let w = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        let basis = build_basis(&x, &w).unwrap();
        let close = |a: DVector<f64>, b: DVector<f64>| (a - b).amax() < 1e-14;
        assert!(close(basis.q1(), DVector::from_element(4, 0.5)));
        assert!(close(basis.qx().column(0).into_owned(), x.column(0) / 2.0));
        assert!(close(basis.qw().column(0).into_owned(), w.column(0) / 2.0));
        assert_eq!(basis.qr().ncols(), 1);
    }

    #[test]
    fn duplicated_control_is_rank_deficient() {
        let mut rng = substream(3, Domain::Auxiliary, 0);
        let x = DMatrix::from_fn(10, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut w = DMatrix::from_fn(10, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = w.column(0).into_owned();
        w.set_column(2, &c);
        assert!(matches!(
            build_basis(&x, &w),
            Err(Error::RankDeficient {
                block: crate::error::Block::Controls,
                column: 2
            })
        ));
        assert!(matches!(
            build_basis(&x, &DMatrix::zeros(3, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn intercept_only_signal_has_zero_coordinates() {
        let mut rng = substream(5, Domain::Auxiliary, 0);
        let x = DMatrix::from_fn(9, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DMatrix::from_fn(9, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let basis = build_basis(&x, &w).unwrap();
        let form = transform(&DVector::from_element(9, 2.5), &basis, &x, &w).unwrap();
        assert!(form.y_star_x.amax() < 1e-13);
        assert!(form.y_star_w.amax() < 1e-13);
        assert!(form.y_star_r.amax() < 1e-13);
        assert!((form.y_star_1 - 2.5 * 3.0).abs() < 1e-13);
    }

    #[test]
    fn identity_and_translation_elements() {
        let mut rng = substream(6, Domain::Auxiliary, 0);
        let (m, k, s) = (2, 3, 5);
        let mut normal = |r, c| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = CanonicalSample {
            yx: normal(m, 1).column(0).into_owned(),
            yperp: normal(s, 1).column(0).into_owned(),
            wx: normal(m, k),
            wperp: normal(s, k),
        };
        let a = normal(k, k);
        let sigma_w = a.tr_mul(&a) + DMatrix::identity(k, k);
        let action = GroupAction::new(&sigma_w).unwrap();

        let same = action
            .on_sample(&GroupElement::identity(m, k, s), &z)
            .unwrap();
        assert!((same.wperp - &z.wperp).amax() < 1e-12);
        assert!((same.yx - &z.yx).amax() < 1e-15);

        let mut shift = GroupElement::identity(m, k, s);
        shift.g_mu = DVector::from_vec(vec![1.0, -2.0]);
        let moved = action.on_sample(&shift, &z).unwrap();
        assert!((moved.yx - (&z.yx + &shift.g_mu)).amax() < 1e-15);
        assert!((moved.wx - &z.wx).amax() < 1e-12);
        assert_eq!(moved.yperp, z.yperp);
    }

    #[test]
    fn rotation_only_leaves_gamma() {
        let mut rng = substream(8, Domain::Auxiliary, 0);
        let theta = Theta {
            mu_x: DVector::from_vec(vec![1.0, 2.0]),
            gamma: DVector::from_vec(vec![0.5, -1.0, 2.0]),
        };
        let mut g = GroupElement::identity(2, 3, 4);
        g.g_x = random_orthogonal(2, &mut rng);
        let out = apply_group_params(&g, &theta, &DMatrix::identity(3, 3)).unwrap();
        assert!((out.mu_x - &g.g_x * &theta.mu_x).amax() < 1e-15);
        assert!((out.gamma - &theta.gamma).amax() < 1e-14);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = substream(9, Domain::Auxiliary, 0);
        for dim in [1, 2, 7] {
            let g = random_orthogonal(dim, &mut rng);
            assert!((g.tr_mul(&g) - DMatrix::identity(dim, dim)).amax() < 1e-13);
        }
        let mut g = GroupElement::random(2, 3, 4, &mut rng);
        assert!(g.validate().is_ok());
        g.g_w[(0, 0)] += 1e-6;
        assert!(g.validate().is_err());
    }

    #[test]
    fn symmetric_root_squares_back() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let root = SymmetricRoot::new(&s).unwrap();
        assert!((&root.sqrt * &root.sqrt - &s).amax() < 1e-13);
        assert!((&root.sqrt * &root.inv_sqrt - DMatrix::identity(2, 2)).amax() < 1e-13);
        assert!((&root.sqrt - root.sqrt.transpose()).amax() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SymmetricRoot::new(&bad),
            Err(Error::NotPositiveDefinite { minor: 2 })
        ));
    }
}

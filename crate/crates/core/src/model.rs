//! Regression data, ground-truth parameters and the Gaussian
//! data-generating process used by every simulation.
//!
//! The outcome follows `Y = 1 alpha + X beta + W gamma + U` with
//! `U ~ N(0, sigma2 I)`. Conditional on the design `x`, the control rows are
//! independent with `W_i ~ N(alpha_w + x_i beta_w, sigma_w)`. The design is
//! held fixed across replications; each replication draws a fresh `(W, U)`
//! from its own substream.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Raw observations: outcome `y` (n), treatment `x` (n x m), controls `w` (n x k).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl RegressionData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || w.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows but x has {} and w has {}",
                x.nrows(),
                w.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Dimension("x must have at least one column".into()));
        }
        Ok(Self { y, x, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }
}

/// Outcome-equation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Noise variance. Zero is accepted for noiseless checks.
    pub sigma2: f64,
}

/// Conditional distribution of the controls given the design.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateModel {
    pub alpha_w: DVector<f64>,
    /// m x k; zero means exogenous treatment.
    pub beta_w: DMatrix<f64>,
    /// k x k, symmetric positive definite.
    pub sigma_w: DMatrix<f64>,
}

impl CovariateModel {
    pub fn is_exogenous(&self) -> bool {
        self.beta_w.iter().all(|&v| v == 0.0)
    }

    fn validate(&self, m: usize, k: usize) -> Result<()> {
        if self.alpha_w.len() != k {
            return Err(Error::config(
                "alpha_w",
                format!("expected {k} entries, got {}", self.alpha_w.len()),
            ));
        }
        if self.beta_w.shape() != (m, k) {
            return Err(Error::config(
                "beta_w",
                format!("expected {m}x{k}, got {:?}", self.beta_w.shape()),
            ));
        }
        if self.sigma_w.shape() != (k, k) {
            return Err(Error::config(
                "sigma_w",
                format!("expected {k}x{k}, got {:?}", self.sigma_w.shape()),
            ));
        }
        check_symmetric(&self.sigma_w).map_err(|reason| Error::config("sigma_w", reason))?;
        cholesky_sqrt(&self.sigma_w).map_err(|e| Error::config("sigma_w", e.to_string()))?;
        Ok(())
    }
}

/// Symmetry to relative tolerance 1e-12 of the largest entry.
pub(crate) fn check_symmetric(a: &DMatrix<f64>) -> std::result::Result<(), String> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(format!("not symmetric at ({i}, {j})"));
            }
        }
    }
    Ok(())
}

/// How the treatment design is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum XDesign {
    /// Drawn once per experiment from iid standard normals, then held fixed.
    Gaussian,
    Fixed(DMatrix<f64>),
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDgpConfig", into = "RawDgpConfig")]
pub struct DgpConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub params: ModelParams,
    pub covariates: CovariateModel,
    pub x_design: XDesign,
    pub seed: u64,
}

impl DgpConfig {
    /// Standard exogenous configuration: `alpha = 0`, `alpha_w = 0`,
    /// `beta_w = 0`, Gaussian design.
    pub fn exogenous(
        n: usize,
        beta: DVector<f64>,
        gamma: DVector<f64>,
        sigma2: f64,
        sigma_w: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        let (m, k) = (beta.len(), gamma.len());
        let config = Self {
            n,
            m,
            k,
            params: ModelParams {
                alpha: 0.0,
                beta,
                gamma,
                sigma2,
            },
            covariates: CovariateModel {
                alpha_w: DVector::zeros(k),
                beta_w: DMatrix::zeros(m, k),
                sigma_w,
            },
            x_design: XDesign::Gaussian,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, k) = (self.n, self.m, self.k);
        if m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        if n < 1 + m + k {
            return Err(Error::config(
                "n",
                format!("need n >= 1 + m + k = {}, got {n}", 1 + m + k),
            ));
        }
        if self.params.beta.len() != m {
            return Err(Error::config(
                "beta",
                format!("expected {m} entries, got {}", self.params.beta.len()),
            ));
        }
        if self.params.gamma.len() != k {
            return Err(Error::config(
                "gamma",
                format!("expected {k} entries, got {}", self.params.gamma.len()),
            ));
        }
        if !(self.params.sigma2 >= 0.0) || !self.params.sigma2.is_finite() {
            return Err(Error::config("sigma2", "must be finite and non-negative"));
        }
        self.covariates.validate(m, k)?;
        if let XDesign::Fixed(x) = &self.x_design {
            if x.shape() != (n, m) {
                return Err(Error::config(
                    "x_design",
                    format!("expected {n}x{m}, got {:?}", x.shape()),
                ));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.params.alpha.is_finite()
            || !finite(self.params.beta.as_slice())
            || !finite(self.params.gamma.as_slice())
            || !finite(self.covariates.alpha_w.as_slice())
            || !finite(self.covariates.beta_w.as_slice())
        {
            return Err(Error::config("params", "entries must be finite"));
        }
        Ok(())
    }

    /// Regime where shrinkage is guaranteed to dominate: `k >= 3` and `n >= m + k + 2`.
    pub fn in_dominance_regime(&self) -> bool {
        self.k >= 3 && self.n >= self.m + self.k + 2
    }

    /// The design matrix: the fixed matrix, or the Gaussian draw for this seed.
    pub fn design(&self) -> DMatrix<f64> {
        match &self.x_design {
            XDesign::Fixed(x) => x.clone(),
            XDesign::Gaussian => {
                let mut rng = substream(self.seed, Domain::Design, 0);
                // row-major fill so the draw order is independent of storage layout
                let values: Vec<f64> = (0..self.n * self.m)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                DMatrix::from_row_slice(self.n, self.m, &values)
            }
        }
    }
}

/// Lower-triangular `L` with `L L' = sigma`.
///
/// Only the lower triangle is read. Fails on the first leading minor that is
/// not positive.
pub fn cholesky_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = sigma.nrows();
    if sigma.ncols() != k {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {:?}",
            sigma.shape()
        )));
    }
    let mut l = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = sigma[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { minor: j + 1 });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..k {
            let mut s = sigma[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// A configuration with its design drawn and `sigma_w` factored, ready to
/// produce replications.
#[derive(Debug, Clone)]
pub struct Dgp {
    config: DgpConfig,
    x: DMatrix<f64>,
    /// x * beta_w plus the row intercept, n x k.
    w_mean: DMatrix<f64>,
    chol_t: DMatrix<f64>,
    signal: DVector<f64>,
}

impl Dgp {
    pub fn new(config: DgpConfig) -> Result<Self> {
        config.validate()?;
        let x = config.design();
        let chol_t = cholesky_sqrt(&config.covariates.sigma_w)?.transpose();
        let mut w_mean = &x * &config.covariates.beta_w;
        for mut row in w_mean.row_iter_mut() {
            row += config.covariates.alpha_w.transpose();
        }
        let mut signal = &x * &config.params.beta;
        signal.add_scalar_mut(config.params.alpha);
        Ok(Self {
            config,
            x,
            w_mean,
            chol_t,
            signal,
        })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.config
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Replication `index`. Draw order: the n x k standard normals behind
    /// `W` row by row, then the n outcome shocks.
    pub fn simulate(&self, index: u64) -> RegressionData {
        let DgpConfig { n, k, .. } = self.config;
        let mut rng = substream(self.config.seed, Domain::Replication, index);
        let w = self.draw_w(&mut rng, n, k);
        self.outcome(w, &mut rng)
    }

    /// A control matrix from its own substream, for experiments that
    /// condition on `W = w`.
    pub fn fixed_controls(&self) -> DMatrix<f64> {
        let DgpConfig { n, k, .. } = self.config;
        let mut rng = substream(self.config.seed, Domain::Auxiliary, 0);
        self.draw_w(&mut rng, n, k)
    }

    fn draw_w<R: Rng>(&self, rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
        let z: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
        DMatrix::from_row_slice(n, k, &z) * &self.chol_t + &self.w_mean
    }

    /// Outcome draw for given controls; used when conditioning on `W = w`.
    pub fn simulate_given_w(&self, w: &DMatrix<f64>, index: u64) -> RegressionData {
        let mut rng = substream(self.config.seed, Domain::Replication, index);
        self.outcome(w.clone(), &mut rng)
    }

    fn outcome<R: Rng>(&self, w: DMatrix<f64>, rng: &mut R) -> RegressionData {
        let sigma = self.config.params.sigma2.sqrt();
        let mut y = &w * &self.config.params.gamma + &self.signal;
        for yi in y.iter_mut() {
            let u: f64 = rng.sample(StandardNormal);
            *yi += sigma * u;
        }
        RegressionData {
            y,
            x: self.x.clone(),
            w,
        }
    }
}

/// One replication of `config`; bit-identical for equal `(seed, index)`.
pub fn simulate(config: &DgpConfig, index: u64) -> Result<RegressionData> {
    Ok(Dgp::new(config.clone())?.simulate(index))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum MatrixRepr {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl MatrixRepr {
    pub(crate) fn into_matrix(self, field: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let flat = match self {
            MatrixRepr::Flat(v) => v,
            MatrixRepr::Rows(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::config(
                        field,
                        format!("expected {rows} rows of {cols} entries"),
                    ));
                }
                r.concat()
            }
        };
        if flat.len() != rows * cols {
            return Err(Error::config(
                field,
                format!(
                    "expected {} row-major entries ({rows}x{cols}), got {}",
                    rows * cols,
                    flat.len()
                ),
            ));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &flat))
    }

    fn from_matrix(a: &DMatrix<f64>) -> Self {
        MatrixRepr::Flat(row_major(a))
    }
}

pub(crate) fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    a.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawDesign {
    Named(String),
    Matrix(MatrixRepr),
}

/// Flat JSON layout of a [`DgpConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDgpConfig {
    n: usize,
    m: usize,
    k: usize,
    #[serde(default)]
    alpha: f64,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    sigma2: f64,
    #[serde(default)]
    alpha_w: Option<Vec<f64>>,
    #[serde(default)]
    beta_w: Option<MatrixRepr>,
    #[serde(default)]
    sigma_w: Option<MatrixRepr>,
    #[serde(default = "gaussian_design")]
    x_design: RawDesign,
    seed: u64,
}

fn gaussian_design() -> RawDesign {
    RawDesign::Named("gaussian".into())
}

impl TryFrom<RawDgpConfig> for DgpConfig {
    type Error = Error;

    fn try_from(raw: RawDgpConfig) -> Result<Self> {
        let (n, m, k) = (raw.n, raw.m, raw.k);
        let alpha_w = DVector::from_vec(raw.alpha_w.unwrap_or_else(|| vec![0.0; k]));
        let beta_w = match raw.beta_w {
            Some(b) => b.into_matrix("beta_w", m, k)?,
            None => DMatrix::zeros(m, k),
        };
        let sigma_w = match raw.sigma_w {
            Some(s) => s.into_matrix("sigma_w", k, k)?,
            None => DMatrix::identity(k, k),
        };
        let x_design = match raw.x_design {
            RawDesign::Named(name) if name == "gaussian" => XDesign::Gaussian,
            RawDesign::Named(name) => {
                return Err(Error::config(
                    "x_design",
                    format!("unknown design `{name}`; use \"gaussian\" or a matrix"),
                ))
            }
            RawDesign::Matrix(x) => XDesign::Fixed(x.into_matrix("x_design", n, m)?),
        };
        let config = DgpConfig {
            n,
            m,
            k,
            params: ModelParams {
                alpha: raw.alpha,
                beta: DVector::from_vec(raw.beta),
                gamma: DVector::from_vec(raw.gamma),
                sigma2: raw.sigma2,
            },
            covariates: CovariateModel {
                alpha_w,
                beta_w,
                sigma_w,
            },
            x_design,
            seed: raw.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

impl From<DgpConfig> for RawDgpConfig {
    fn from(c: DgpConfig) -> Self {
        RawDgpConfig {
            n: c.n,
            m: c.m,
            k: c.k,
            alpha: c.params.alpha,
            beta: c.params.beta.as_slice().to_vec(),
            gamma: c.params.gamma.as_slice().to_vec(),
            sigma2: c.params.sigma2,
            alpha_w: Some(c.covariates.alpha_w.as_slice().to_vec()),
            beta_w: Some(MatrixRepr::from_matrix(&c.covariates.beta_w)),
            sigma_w: Some(MatrixRepr::from_matrix(&c.covariates.sigma_w)),
            x_design: match &c.x_design {
                XDesign::Gaussian => gaussian_design(),
                XDesign::Fixed(x) => RawDesign::Matrix(MatrixRepr::from_matrix(x)),
            },
            seed: c.seed,
        }
    }
}

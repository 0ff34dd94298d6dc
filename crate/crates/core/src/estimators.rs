//! Estimation rules for the treatment coefficient.
//!
//! Every rule here is a two-step estimator: pick `gamma_hat` for the
//! controls, then regress `Y - W gamma_hat` on `(1, X)`. The rules differ in
//! the first step only:
//!
//! | rule                  | `gamma_hat`                                              |
//! |-----------------------|----------------------------------------------------------|
//! | long OLS              | `gamma_ols`                                              |
//! | short OLS             | `0`                                                      |
//! | shrink (`p`)          | `(1 - p SSR / ||gamma_ols||^2_M) gamma_ols`              |
//! | shrink, positive part | same factor clamped at zero                              |
//! | empirical Bayes       | shrink at `p = (k - 2) / (s - k)`, `s = n - m - 1`        |
//! | generalized Bayes     | `(W'MW + sigma2 / tau2 * sigma_w)^{-1} W'MY`             |
//!
//! where `M = h (I - X (X'hX)^{-1} X') h` is the residual maker of `(1, X)`
//! and `SSR` is the residual sum of squares of the long regression.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::canon::CanonicalSample;
use crate::error::{Block, Error, Result};
use crate::linalg::{design_matrix, LeastSquares, ILL_CONDITIONED};
use crate::model::{check_symmetric, RegressionData};

/// A seminorm at or below `DEGENERATE_RATIO * SSR` is treated as zero.
pub const DEGENERATE_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    OlsLong,
    OlsShort,
    /// `p = None` selects the empirical-Bayes value `(k - 2) / (n - m - k - 1)`.
    Shrink {
        p: Option<f64>,
    },
    ShrinkPositivePart {
        p: Option<f64>,
    },
    EmpiricalBayes,
    GeneralizedBayes {
        sigma2: f64,
        tau2: f64,
        sigma_w: DMatrix<f64>,
    },
}

impl EstimatorKind {
    /// Name used on the command line and as the default report label.
    pub fn flag(&self) -> &'static str {
        match self {
            EstimatorKind::OlsLong => "ols-long",
            EstimatorKind::OlsShort => "ols-short",
            EstimatorKind::Shrink { .. } => "shrink",
            EstimatorKind::ShrinkPositivePart { .. } => "shrink-pp",
            EstimatorKind::EmpiricalBayes => "eb",
            EstimatorKind::GeneralizedBayes { .. } => "gbayes",
        }
    }
}

/// A named estimation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub name: String,
    pub kind: EstimatorKind,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            name: kind.flag().to_string(),
            kind,
        }
    }

    pub fn ols_long() -> Self {
        Self::new(EstimatorKind::OlsLong)
    }

    pub fn ols_short() -> Self {
        Self::new(EstimatorKind::OlsShort)
    }

    pub fn shrink(p: Option<f64>) -> Self {
        Self::new(EstimatorKind::Shrink { p })
    }

    pub fn shrink_positive_part(p: Option<f64>) -> Self {
        Self::new(EstimatorKind::ShrinkPositivePart { p })
    }

    pub fn empirical_bayes() -> Self {
        Self::new(EstimatorKind::EmpiricalBayes)
    }

    pub fn generalized_bayes(sigma2: f64, tau2: f64, sigma_w: DMatrix<f64>) -> Self {
        Self::new(EstimatorKind::GeneralizedBayes {
            sigma2,
            tau2,
            sigma_w,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Population quantities the rule consumes beyond the data.
    pub fn known_inputs(&self) -> &'static [&'static str] {
        match self.kind {
            EstimatorKind::GeneralizedBayes { .. } => &["sigma2", "tau2", "sigma_w"],
            _ => &[],
        }
    }

    /// Shape and range checks that do not need data beyond `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match &self.kind {
            EstimatorKind::Shrink { p: Some(p) }
            | EstimatorKind::ShrinkPositivePart { p: Some(p) } => check_p(*p),
            EstimatorKind::GeneralizedBayes {
                sigma2,
                tau2,
                sigma_w,
            } => check_gbayes(*sigma2, *tau2, sigma_w, k),
            _ => Ok(()),
        }
    }

    /// Two-step classes use at least one shrinkage-type first stage.
    pub fn is_shrinkage(&self) -> bool {
        matches!(
            self.kind,
            EstimatorKind::Shrink { .. }
                | EstimatorKind::ShrinkPositivePart { .. }
                | EstimatorKind::EmpiricalBayes
        )
    }

    pub fn estimate(&self, data: &RegressionData) -> Result<EstimateResult> {
        let mut result = match &self.kind {
            EstimatorKind::OlsLong => ols_long(data),
            EstimatorKind::OlsShort => ols_short(data),
            EstimatorKind::Shrink { p } => shrink_with_default(data, *p, false),
            EstimatorKind::ShrinkPositivePart { p } => shrink_with_default(data, *p, true),
            EstimatorKind::EmpiricalBayes => empirical_bayes(data),
            EstimatorKind::GeneralizedBayes {
                sigma2,
                tau2,
                sigma_w,
            } => generalized_bayes(data, *sigma2, *tau2, sigma_w),
        }?;
        result.estimator = self.name.clone();
        Ok(result)
    }

    /// The first-step rule for `gamma`, as a function of the partialled-out
    /// sample `(M y, M w)` of a problem with dimensions `(n, m, k)`.
    pub fn first_stage(&self, n: usize, m: usize, k: usize) -> Result<FirstStage> {
        self.validate(k)?;
        Ok(match &self.kind {
            EstimatorKind::OlsLong => FirstStage::Ols,
            EstimatorKind::OlsShort => FirstStage::Zero,
            EstimatorKind::Shrink { p } => FirstStage::Shrink {
                p: resolve_p(*p, n, m, k)?,
                positive_part: false,
            },
            EstimatorKind::ShrinkPositivePart { p } => FirstStage::Shrink {
                p: resolve_p(*p, n, m, k)?,
                positive_part: true,
            },
            EstimatorKind::EmpiricalBayes => FirstStage::EmpiricalBayes,
            EstimatorKind::GeneralizedBayes {
                sigma2,
                tau2,
                sigma_w,
            } => FirstStage::Ridge {
                penalty: sigma_w * (*sigma2 / *tau2),
            },
        })
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 0.0) || !p.is_finite() {
        return Err(Error::config(
            "p",
            format!("must be finite and non-negative, got {p}"),
        ));
    }
    Ok(())
}

fn check_gbayes(sigma2: f64, tau2: f64, sigma_w: &DMatrix<f64>, k: usize) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::config("sigma2", "must be positive"));
    }
    if !(tau2 > 0.0) || !tau2.is_finite() {
        return Err(Error::config("tau2", "must be positive"));
    }
    if sigma_w.shape() != (k, k) {
        return Err(Error::config(
            "sigma_w",
            format!("expected {k}x{k}, got {:?}", sigma_w.shape()),
        ));
    }
    check_symmetric(sigma_w).map_err(|r| Error::config("sigma_w", r))?;
    crate::model::cholesky_sqrt(sigma_w)?;
    Ok(())
}

/// Upper end of the dominance interval, `2 (k - 2) / (n - m - k + 2)`.
pub fn p_upper_bound(n: usize, m: usize, k: usize) -> f64 {
    2.0 * (k as f64 - 2.0) / (n as f64 - m as f64 - k as f64 + 2.0)
}

/// Classic unknown-variance James-Stein value `(k - 2) / (n - m - k + 1)`.
pub fn p_james_stein(n: usize, m: usize, k: usize) -> f64 {
    (k as f64 - 2.0) / (n as f64 - m as f64 - k as f64 + 1.0)
}

/// Empirical-Bayes value `(k - 2) / (s - k)` with `s = n - m - 1`; `None`
/// when `s <= k`.
pub fn p_empirical_bayes(n: usize, m: usize, k: usize) -> Option<f64> {
    let s = n.checked_sub(m + 1)?;
    (s > k).then(|| (k as f64 - 2.0) / (s - k) as f64)
}

fn resolve_p(p: Option<f64>, n: usize, m: usize, k: usize) -> Result<f64> {
    match p {
        Some(p) => {
            check_p(p)?;
            Ok(p)
        }
        None => p_empirical_bayes(n, m, k)
            .filter(|p| *p >= 0.0)
            .ok_or_else(|| {
                Error::Undefined(format!(
                    "default p needs k >= 2 and n - m - k - 1 > 0 (n={n}, m={m}, k={k})"
                ))
            }),
    }
}

/// Non-fatal findings attached to an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    POutsideDominanceInterval { p: f64, upper: f64, default: bool },
    TooFewControls { k: usize },
    SampleTooSmall { n: usize, m: usize, k: usize },
    DegenerateDenominator,
    IllConditioned { condition: f64 },
    LongFitUnavailable,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::POutsideDominanceInterval { p, upper, default } => {
                let which = if *default { "default p" } else { "p" };
                write!(
                    f,
                    "{which} outside dominance interval: p = {p} not in (0, {upper})"
                )
            }
            Warning::TooFewControls { k } => write!(
                f,
                "fewer than three controls (k = {k}): no dominance guarantee"
            ),
            Warning::SampleTooSmall { n, m, k } => {
                write!(
                    f,
                    "n < m + k + 2 (n = {n}, m = {m}, k = {k}): no dominance guarantee"
                )
            }
            Warning::DegenerateDenominator => {
                write!(
                    f,
                    "degenerate seminorm denominator: control coefficients fully shrunk to zero"
                )
            }
            Warning::IllConditioned { condition } => write!(
                f,
                "ill-conditioned design (condition estimate {condition:e})"
            ),
            Warning::LongFitUnavailable => write!(
                f,
                "long regression unavailable; ssr is from the short regression"
            ),
        }
    }
}

impl Serialize for Warning {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `||gamma_ols||^2_M`; zero for rules that do not use it.
    pub seminorm_value: f64,
    pub p_used: Option<f64>,
    pub p_upper_bound: f64,
    pub p_james_stein: f64,
    pub p_empirical_bayes: Option<f64>,
    pub degenerate_denominator: bool,
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimator: String,
    pub beta_hat: DVector<f64>,
    pub gamma_hat: DVector<f64>,
    pub alpha_hat: f64,
    /// Multiplier on `gamma_ols`: 1 for long OLS, 0 for short OLS. For the
    /// generalized-Bayes rule, the norm ratio `||M W gamma_hat|| / ||M W gamma_ols||`.
    pub shrink_factor: f64,
    /// Residual sum of squares of the long regression.
    pub ssr: f64,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<Warning>,
}

impl Serialize for EstimateResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(9))?;
        map.serialize_entry("estimator", &self.estimator)?;
        map.serialize_entry("beta_hat", self.beta_hat.as_slice())?;
        map.serialize_entry("gamma_hat", self.gamma_hat.as_slice())?;
        map.serialize_entry("alpha_hat", &self.alpha_hat)?;
        map.serialize_entry("shrink_factor", &self.shrink_factor)?;
        map.serialize_entry("ssr", &self.ssr)?;
        map.serialize_entry("p_used", &self.diagnostics.p_used)?;
        map.serialize_entry("p_upper_bound", &self.diagnostics.p_upper_bound)?;
        map.serialize_entry("warnings", &self.warnings)?;
        map.end()
    }
}

/// Least-squares fit of `y` on `[1 | x | w]`.
struct LongFit {
    alpha: f64,
    beta: DVector<f64>,
    gamma: DVector<f64>,
    ssr: f64,
    condition: f64,
}

fn long_fit(data: &RegressionData) -> Result<LongFit> {
    let (m, k) = (data.m(), data.k());
    let design = design_matrix(&data.x, Some(&data.w));
    let ls = LeastSquares::new(design.clone(), m)?;
    let coef = ls.solve(&data.y);
    let ssr = (&data.y - &design * &coef).norm_squared();
    Ok(LongFit {
        alpha: coef[0],
        beta: coef.rows(1, m).into_owned(),
        gamma: coef.rows(1 + m, k).into_owned(),
        ssr,
        condition: ls.condition_estimate(),
    })
}

/// Least squares on `(1, X)`: the second step shared by every rule.
struct ShortStage {
    ls: LeastSquares,
    m: usize,
}

impl ShortStage {
    fn new(data: &RegressionData) -> Result<Self> {
        let m = data.m();
        Ok(Self {
            ls: LeastSquares::new(design_matrix(&data.x, None), m)?,
            m,
        })
    }

    /// `(alpha, beta)` from regressing `target` on `(1, X)`.
    fn refit(&self, target: &DVector<f64>) -> (f64, DVector<f64>) {
        let coef = self.ls.solve(target);
        (coef[0], coef.rows(1, self.m).into_owned())
    }
}

fn base_diagnostics(data: &RegressionData) -> Diagnostics {
    let (n, m, k) = (data.n(), data.m(), data.k());
    Diagnostics {
        seminorm_value: 0.0,
        p_used: None,
        p_upper_bound: p_upper_bound(n, m, k),
        p_james_stein: p_james_stein(n, m, k),
        p_empirical_bayes: p_empirical_bayes(n, m, k),
        degenerate_denominator: false,
        condition_estimate: f64::NAN,
    }
}

fn condition_warning(condition: f64, warnings: &mut Vec<Warning>) {
    if condition >= ILL_CONDITIONED {
        warnings.push(Warning::IllConditioned { condition });
    }
}

/// Warnings for using shrinkage outside the regime with a dominance guarantee.
fn regime_warnings(n: usize, m: usize, k: usize, warnings: &mut Vec<Warning>) {
    if k < 3 {
        warnings.push(Warning::TooFewControls { k });
    } else if n < m + k + 2 {
        warnings.push(Warning::SampleTooSmall { n, m, k });
    }
}

/// Least squares of `Y` on `(1, X, W)`.
pub fn ols_long(data: &RegressionData) -> Result<EstimateResult> {
    let fit = long_fit(data)?;
    let mut warnings = Vec::new();
    condition_warning(fit.condition, &mut warnings);
    Ok(EstimateResult {
        estimator: "ols-long".into(),
        beta_hat: fit.beta,
        gamma_hat: fit.gamma,
        alpha_hat: fit.alpha,
        shrink_factor: 1.0,
        ssr: fit.ssr,
        diagnostics: Diagnostics {
            condition_estimate: fit.condition,
            ..base_diagnostics(data)
        },
        warnings,
    })
}

/// Least squares of `Y` on `(1, X)`, ignoring the controls.
pub fn ols_short(data: &RegressionData) -> Result<EstimateResult> {
    let short = ShortStage::new(data)?;
    let (alpha_hat, beta_hat) = short.refit(&data.y);
    let mut warnings = Vec::new();
    let (ssr, condition) = match long_fit(data) {
        Ok(fit) => (fit.ssr, fit.condition),
        Err(_) => {
            warnings.push(Warning::LongFitUnavailable);
            (
                short.ls.residual(&data.y).norm_squared(),
                short.ls.condition_estimate(),
            )
        }
    };
    condition_warning(condition, &mut warnings);
    Ok(EstimateResult {
        estimator: "ols-short".into(),
        beta_hat,
        gamma_hat: DVector::zeros(data.k()),
        alpha_hat,
        shrink_factor: 0.0,
        ssr,
        diagnostics: Diagnostics {
            condition_estimate: condition,
            ..base_diagnostics(data)
        },
        warnings,
    })
}

/// `gamma' W'h(I - X(X'hX)^{-1}X')hW gamma`, evaluated as the squared norm
/// of `W gamma` after projecting out `(1, X)`.
pub fn seminorm_gamma(data: &RegressionData, gamma: &DVector<f64>) -> Result<f64> {
    if gamma.len() != data.k() {
        return Err(Error::Dimension(format!(
            "gamma has {} entries, expected {}",
            gamma.len(),
            data.k()
        )));
    }
    let short = ShortStage::new(data)?;
    Ok(short.ls.residual(&(&data.w * gamma)).norm_squared())
}

fn shrink_with_default(
    data: &RegressionData,
    p: Option<f64>,
    positive_part: bool,
) -> Result<EstimateResult> {
    let (n, m, k) = (data.n(), data.m(), data.k());
    let resolved = resolve_p(p, n, m, k)?;
    let mut result = shrink_gamma(data, resolved, positive_part)?;
    if p.is_none() && k >= 3 && n >= m + k + 2 {
        // (k-2)/(d-1) >= 2(k-2)/(d+2) exactly when d = n - m - k <= 4
        if n - m - k <= 4 {
            result
                .warnings
                .retain(|w| !matches!(w, Warning::POutsideDominanceInterval { .. }));
            result.warnings.push(Warning::POutsideDominanceInterval {
                p: resolved,
                upper: result.diagnostics.p_upper_bound,
                default: true,
            });
        }
    }
    Ok(result)
}

/// Shrink `gamma_ols` by `1 - p SSR / ||gamma_ols||^2_M`, clamped at zero
/// when `positive_part`, then refit `beta` on `Y - W gamma_hat`.
///
/// A seminorm at or below `1e-14 * SSR` gives full shrinkage and a
/// [`Warning::DegenerateDenominator`].
pub fn shrink_gamma(data: &RegressionData, p: f64, positive_part: bool) -> Result<EstimateResult> {
    check_p(p)?;
    let (n, m, k) = (data.n(), data.m(), data.k());
    let fit = long_fit(data)?;
    let short = ShortStage::new(data)?;
    let seminorm = short.ls.residual(&(&data.w * &fit.gamma)).norm_squared();

    let mut warnings = Vec::new();
    condition_warning(fit.condition, &mut warnings);
    regime_warnings(n, m, k, &mut warnings);
    let upper = p_upper_bound(n, m, k);
    if k >= 3 && !(p > 0.0 && p < upper) {
        warnings.push(Warning::POutsideDominanceInterval {
            p,
            upper,
            default: false,
        });
    }

    let degenerate = seminorm <= DEGENERATE_RATIO * fit.ssr;
    let mut factor = if degenerate {
        0.0
    } else {
        1.0 - p * fit.ssr / seminorm
    };
    if degenerate {
        warnings.push(Warning::DegenerateDenominator);
    }
    if positive_part {
        factor = factor.max(0.0);
    }

    let gamma_hat = &fit.gamma * factor;
    let (alpha_hat, beta_hat) = if factor == 1.0 {
        (fit.alpha, fit.beta.clone())
    } else {
        short.refit(&(&data.y - &data.w * &gamma_hat))
    };
    Ok(EstimateResult {
        estimator: if positive_part { "shrink-pp" } else { "shrink" }.into(),
        beta_hat,
        gamma_hat,
        alpha_hat,
        shrink_factor: factor,
        ssr: fit.ssr,
        diagnostics: Diagnostics {
            seminorm_value: seminorm,
            p_used: Some(p),
            degenerate_denominator: degenerate,
            condition_estimate: fit.condition,
            ..base_diagnostics(data)
        },
        warnings,
    })
}

/// Partialled-out sample `(M y, M w)` with `M` the residual maker of `(1, X)`.
struct Partialled {
    short: ShortStage,
    ey: DVector<f64>,
    ew: DMatrix<f64>,
}

impl Partialled {
    fn new(data: &RegressionData) -> Result<Self> {
        let short = ShortStage::new(data)?;
        let ey = short.ls.residual(&data.y);
        let ew = short.ls.residual_matrix(&data.w);
        Ok(Self { short, ey, ew })
    }
}

/// Controls-only least squares (no intercept); rank errors are reported
/// against the control block.
fn controls_fit(w: &DMatrix<f64>) -> Result<LeastSquares> {
    LeastSquares::with_labels(w.clone(), |j| (Block::Controls, j))
}

/// Empirical-Bayes factor
/// `C = 1 - [y'(I - P)y / (s - k)] / [y'P y / (k - 2)]` on the partialled-out
/// sample, with `P` the projection onto the partialled-out controls.
pub fn empirical_bayes(data: &RegressionData) -> Result<EstimateResult> {
    let (n, m, k) = (data.n(), data.m(), data.k());
    if k < 3 {
        return Err(Error::Undefined(format!(
            "empirical-Bayes factor needs k >= 3, got k = {k}"
        )));
    }
    let s = n.saturating_sub(m + 1);
    if s <= k {
        return Err(Error::Undefined(format!(
            "empirical-Bayes factor needs s = n - m - 1 > k (s = {s}, k = {k})"
        )));
    }
    let part = Partialled::new(data)?;
    let fit = controls_fit(&part.ew)?;
    let gamma_ols = fit.solve(&part.ey);
    let explained_vec = &part.ew * &gamma_ols;
    let explained = explained_vec.norm_squared();
    let residual = (&part.ey - &explained_vec).norm_squared();

    let mut warnings = Vec::new();
    let condition = fit.condition_estimate();
    condition_warning(condition, &mut warnings);
    regime_warnings(n, m, k, &mut warnings);
    let p = (k as f64 - 2.0) / (s - k) as f64;
    let upper = p_upper_bound(n, m, k);
    if n - m - k <= 4 {
        warnings.push(Warning::POutsideDominanceInterval {
            p,
            upper,
            default: true,
        });
    }

    let degenerate = explained <= DEGENERATE_RATIO * residual;
    let factor = if degenerate {
        warnings.push(Warning::DegenerateDenominator);
        0.0
    } else {
        1.0 - (residual / (s - k) as f64) / (explained / (k as f64 - 2.0))
    };
    let gamma_hat = &gamma_ols * factor;
    let (alpha_hat, beta_hat) = part.short.refit(&(&data.y - &data.w * &gamma_hat));
    Ok(EstimateResult {
        estimator: "eb".into(),
        beta_hat,
        gamma_hat,
        alpha_hat,
        shrink_factor: factor,
        ssr: residual,
        diagnostics: Diagnostics {
            seminorm_value: explained,
            p_used: Some(p),
            degenerate_denominator: degenerate,
            condition_estimate: condition,
            ..base_diagnostics(data)
        },
        warnings,
    })
}

/// Posterior-mean rule under a flat prior on the treatment mean and
/// `gamma ~ N(0, tau2 sigma_w^{-1})`:
/// `gamma_hat = (W'MW + sigma2 / tau2 * sigma_w)^{-1} W'MY`.
pub fn generalized_bayes(
    data: &RegressionData,
    sigma2: f64,
    tau2: f64,
    sigma_w: &DMatrix<f64>,
) -> Result<EstimateResult> {
    let k = data.k();
    check_gbayes(sigma2, tau2, sigma_w, k)?;
    let part = Partialled::new(data)?;
    let gram = part.ew.tr_mul(&part.ew);
    let rhs = part.ew.tr_mul(&part.ey);
    let ridge = (&gram + sigma_w * (sigma2 / tau2))
        .cholesky()
        .ok_or_else(|| Error::Singular("ridge system is not positive definite".into()))?;
    let gamma_hat = ridge.solve(&rhs);

    let fit = controls_fit(&part.ew)?;
    let gamma_ols = fit.solve(&part.ey);
    let full = (&part.ew * &gamma_ols).norm();
    let shrunk = (&part.ew * &gamma_hat).norm();
    let shrink_factor = if full > 0.0 { shrunk / full } else { 0.0 };

    let mut warnings = Vec::new();
    let condition = fit.condition_estimate();
    condition_warning(condition, &mut warnings);
    let (alpha_hat, beta_hat) = part.short.refit(&(&data.y - &data.w * &gamma_hat));
    let ssr = (&part.ey - &part.ew * &gamma_ols).norm_squared();
    Ok(EstimateResult {
        estimator: "gbayes".into(),
        beta_hat,
        gamma_hat,
        alpha_hat,
        shrink_factor,
        ssr,
        diagnostics: Diagnostics {
            condition_estimate: condition,
            ..base_diagnostics(data)
        },
        warnings,
    })
}

/// First-step rule for `gamma` in the intercept-free prediction problem
/// `y = w gamma + noise` with `s` rows.
#[derive(Debug, Clone, PartialEq)]
pub enum FirstStage {
    Zero,
    Ols,
    Shrink {
        p: f64,
        positive_part: bool,
    },
    /// Shrink at `p = (k - 2) / (s - k)`.
    EmpiricalBayes,
    /// `(w'w + penalty)^{-1} w'y`.
    Ridge {
        penalty: DMatrix<f64>,
    },
}

impl FirstStage {
    pub fn fit(&self, y: &DVector<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (s, k) = w.shape();
        if y.len() != s {
            return Err(Error::Dimension(format!(
                "y has {} rows, w has {s}",
                y.len()
            )));
        }
        let shrunk = |p: f64, positive_part: bool| -> Result<DVector<f64>> {
            let g = controls_fit(w)?.solve(y);
            let fitted = w * &g;
            let seminorm = fitted.norm_squared();
            let ssr = (y - &fitted).norm_squared();
            let mut factor = if seminorm <= DEGENERATE_RATIO * ssr {
                0.0
            } else {
                1.0 - p * ssr / seminorm
            };
            if positive_part {
                factor = factor.max(0.0);
            }
            Ok(g * factor)
        };
        match self {
            FirstStage::Zero => Ok(DVector::zeros(k)),
            FirstStage::Ols => Ok(controls_fit(w)?.solve(y)),
            FirstStage::Shrink { p, positive_part } => shrunk(*p, *positive_part),
            FirstStage::EmpiricalBayes => {
                if k < 3 || s <= k {
                    return Err(Error::Undefined(format!(
                        "empirical-Bayes factor needs k >= 3 and s > k (s = {s}, k = {k})"
                    )));
                }
                shrunk((k as f64 - 2.0) / (s - k) as f64, false)
            }
            FirstStage::Ridge { penalty } => (w.tr_mul(w) + penalty)
                .cholesky()
                .map(|c| c.solve(&w.tr_mul(y)))
                .ok_or_else(|| Error::Singular("ridge system is not positive definite".into())),
        }
    }
}

/// Decision rule in canonical coordinates: `y_x - w_x gamma_hat(y_perp, w_perp)`.
pub fn canonical_estimate(rule: &FirstStage, sample: &CanonicalSample) -> Result<DVector<f64>> {
    let gamma_hat = rule.fit(&sample.yperp, &sample.wperp)?;
    Ok(&sample.yx - &sample.wx * gamma_hat)
}

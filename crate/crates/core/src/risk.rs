//! Losses, Monte Carlo risk with common random numbers, and closed-form
//! risk oracles.
//!
//! Every estimator in a run sees the same replication datasets, so loss
//! differences between two estimators are computed replication by
//! replication. Replications may run on any number of workers; results are
//! collected by replication index and reduced serially with compensated
//! summation, so the numbers do not depend on the worker count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::canon::{build_basis, random_orthogonal};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec, FirstStage};
use crate::model::{cholesky_sqrt, Dgp, DgpConfig, RegressionData};
use crate::rng::{substream, Domain};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SHRINKREG_THREADS";

/// Runs with more than this fraction of failed replications are aborted.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Absolute slack added to "within c standard errors" comparisons so that
/// noiseless runs (standard error exactly zero) are not failed by round-off.
pub const NUMERICAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct McOptions {
    /// Worker count; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl McOptions {
    pub fn with_threads(threads: usize) -> Self {
        Self {
            threads: Some(threads),
        }
    }

    /// Reads [`THREADS_ENV`]; unset or unparsable means the default.
    pub fn from_env() -> Self {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&t| t > 0);
        Self { threads }
    }
}

/// Map `f` over replication indices `0..reps`, in parallel, returning
/// results in index order.
pub fn run_replications<T, F>(reps: usize, opts: McOptions, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let work = || (0..reps as u64).into_par_iter().map(&f).collect::<Vec<T>>();
    match opts.threads {
        None => Ok(work()),
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            Ok(pool.install(work))
        }
    }
}

/// Neumaier-compensated sum, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Sample mean and its standard error (sample standard deviation / sqrt(n)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        if n < 2 {
            return Self { mean, se: f64::NAN };
        }
        let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        Self {
            mean,
            se: (ss / (n - 1) as f64 / n as f64).sqrt(),
        }
    }

    /// `|self.mean - target| <= c * se + floor`.
    pub fn within(&self, target: f64, c: f64) -> bool {
        (self.mean - target).abs() <= c * self.se + NUMERICAL_FLOOR * (1.0 + target.abs())
    }

    /// Standardized distance `(mean - target) / se`.
    pub fn z(&self, target: f64) -> f64 {
        (self.mean - target) / self.se
    }
}

/// Prediction-norm loss with weight `X'hX`, stored as the centered design.
#[derive(Debug, Clone)]
pub struct PredictionWeight {
    centered: DMatrix<f64>,
}

impl PredictionWeight {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Self { centered }
    }

    /// `X'hX`.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.centered.tr_mul(&self.centered)
    }

    /// `d' X'hX d = ||h X d||^2`.
    pub fn loss(&self, deviation: &DVector<f64>) -> f64 {
        (&self.centered * deviation).norm_squared()
    }
}

/// `(beta_hat - beta)' X'hX (beta_hat - beta)`.
pub fn prediction_loss(
    beta_hat: &DVector<f64>,
    beta: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    if beta_hat.len() != x.ncols() || beta.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "beta_hat ({}), beta ({}) and x ({} columns) disagree",
            beta_hat.len(),
            beta.len(),
            x.ncols()
        )));
    }
    Ok(PredictionWeight::new(x).loss(&(beta_hat - beta)))
}

/// Per-replication outcomes of several estimators on shared datasets.
#[derive(Debug, Clone)]
pub struct PairedSamples {
    pub names: Vec<String>,
    pub m: usize,
    pub requested: usize,
    pub failed: usize,
    /// `losses[e][r]` for kept replication `r`.
    pub losses: Vec<Vec<f64>>,
    /// `deviations[e][r * m + j]` is component `j` of `beta_hat - beta`.
    pub deviations: Vec<Vec<f64>>,
}

impl PairedSamples {
    pub fn kept(&self) -> usize {
        self.losses.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Component `j` of `beta_hat - beta` for estimator `e`, per replication.
    pub fn deviation_component(&self, e: usize, j: usize) -> Vec<f64> {
        self.deviations[e]
            .iter()
            .skip(j)
            .step_by(self.m)
            .copied()
            .collect()
    }
}

fn check_specs(specs: &[EstimatorSpec], k: usize) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::config(
            "estimators",
            "at least one estimator is required",
        ));
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate(k)?;
        if specs[..i].iter().any(|s| s.name == spec.name) {
            return Err(Error::config(
                "estimators",
                format!("duplicate estimator name `{}`", spec.name),
            ));
        }
    }
    Ok(())
}

fn check_failures(failed: usize, reps: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(Error::TooManyFailures { failed, reps });
    }
    Ok(())
}

/// Run every estimator on replications `0..reps` of `config`.
///
/// A replication on which any estimator fails is dropped for all of them.
pub fn mc_samples(
    config: &DgpConfig,
    specs: &[EstimatorSpec],
    reps: usize,
    opts: McOptions,
) -> Result<PairedSamples> {
    if reps < 2 {
        return Err(Error::config(
            "reps",
            "at least 2 replications are required",
        ));
    }
    check_specs(specs, config.k)?;
    let dgp = Dgp::new(config.clone())?;
    let weight = PredictionWeight::new(dgp.x());
    let beta = &config.params.beta;
    let m = config.m;

    let outcomes = run_replications(reps, opts, |r| {
        let data = dgp.simulate(r);
        specs
            .iter()
            .map(|spec| {
                spec.estimate(&data).ok().map(|est| {
                    let dev = est.beta_hat - beta;
                    (weight.loss(&dev), dev)
                })
            })
            .collect::<Option<Vec<_>>>()
    })?;

    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failed, reps)?;
    let kept = reps - failed;
    let mut losses = vec![Vec::with_capacity(kept); specs.len()];
    let mut deviations = vec![Vec::with_capacity(kept * m); specs.len()];
    for row in outcomes.into_iter().flatten() {
        for (e, (loss, dev)) in row.into_iter().enumerate() {
            losses[e].push(loss);
            deviations[e].extend_from_slice(dev.as_slice());
        }
    }
    Ok(PairedSamples {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        m,
        requested: reps,
        failed,
        losses,
        deviations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRisk {
    pub estimator: String,
    pub mean_loss: f64,
    pub loss_se: f64,
    pub bias: Vec<f64>,
    pub bias_se: Vec<f64>,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedDifference {
    pub estimator_a: String,
    pub estimator_b: String,
    /// Mean of `loss_a - loss_b` over shared replications.
    pub loss_diff_mean: f64,
    pub loss_diff_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub estimators: Vec<EstimatorRisk>,
    pub pairs: Vec<PairedDifference>,
    pub reps_requested: usize,
    pub reps_failed: usize,
}

impl RiskReport {
    pub fn from_samples(samples: &PairedSamples) -> Self {
        let estimators = samples
            .names
            .iter()
            .enumerate()
            .map(|(e, name)| {
                let loss = MeanSe::of(&samples.losses[e]);
                let bias: Vec<MeanSe> = (0..samples.m)
                    .map(|j| MeanSe::of(&samples.deviation_component(e, j)))
                    .collect();
                EstimatorRisk {
                    estimator: name.clone(),
                    mean_loss: loss.mean,
                    loss_se: loss.se,
                    bias: bias.iter().map(|b| b.mean).collect(),
                    bias_se: bias.iter().map(|b| b.se).collect(),
                    reps: samples.kept(),
                }
            })
            .collect();
        let mut pairs = Vec::new();
        for a in 0..samples.names.len() {
            for b in a + 1..samples.names.len() {
                let diff = loss_difference(samples, a, b);
                pairs.push(PairedDifference {
                    estimator_a: samples.names[a].clone(),
                    estimator_b: samples.names[b].clone(),
                    loss_diff_mean: diff.mean,
                    loss_diff_se: diff.se,
                });
            }
        }
        Self {
            estimators,
            pairs,
            reps_requested: samples.requested,
            reps_failed: samples.failed,
        }
    }

    pub fn estimator(&self, name: &str) -> Option<&EstimatorRisk> {
        self.estimators.iter().find(|e| e.estimator == name)
    }

    /// Paired difference `loss_a - loss_b`, whichever order it was stored in.
    pub fn pair(&self, a: &str, b: &str) -> Option<PairedDifference> {
        self.pairs.iter().find_map(|p| {
            if p.estimator_a == a && p.estimator_b == b {
                Some(p.clone())
            } else if p.estimator_a == b && p.estimator_b == a {
                Some(PairedDifference {
                    estimator_a: a.to_string(),
                    estimator_b: b.to_string(),
                    loss_diff_mean: -p.loss_diff_mean,
                    loss_diff_se: p.loss_diff_se,
                })
            } else {
                None
            }
        })
    }

    fn m(&self) -> usize {
        self.estimators.first().map_or(0, |e| e.bias.len())
    }

    /// Estimator table: `estimator, mean_loss, loss_se, bias_1..m, bias_se_1..m, reps`.
    pub fn write_estimator_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.m();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec![
            "estimator".to_string(),
            "mean_loss".into(),
            "loss_se".into(),
        ];
        header.extend((1..=m).map(|j| format!("bias_{j}")));
        header.extend((1..=m).map(|j| format!("bias_se_{j}")));
        header.push("reps".into());
        wtr.write_record(&header).map_err(io_error)?;
        for e in &self.estimators {
            let mut row = vec![
                e.estimator.clone(),
                fmt_f64(e.mean_loss),
                fmt_f64(e.loss_se),
            ];
            row.extend(e.bias.iter().map(|&v| fmt_f64(v)));
            row.extend(e.bias_se.iter().map(|&v| fmt_f64(v)));
            row.push(e.reps.to_string());
            wtr.write_record(&row).map_err(io_error)?;
        }
        wtr.flush()
            .map_err(|e| Error::config("output", e.to_string()))
    }

    /// Pair table: `estimator_a, estimator_b, loss_diff_mean, loss_diff_se`.
    pub fn write_pairs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "estimator_a",
            "estimator_b",
            "loss_diff_mean",
            "loss_diff_se",
        ])
        .map_err(io_error)?;
        for p in &self.pairs {
            wtr.write_record([
                p.estimator_a.clone(),
                p.estimator_b.clone(),
                fmt_f64(p.loss_diff_mean),
                fmt_f64(p.loss_diff_se),
            ])
            .map_err(io_error)?;
        }
        wtr.flush()
            .map_err(|e| Error::config("output", e.to_string()))
    }
}

fn io_error(e: csv::Error) -> Error {
    Error::config("output", e.to_string())
}

/// Shortest decimal string that reads back to the same binary64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else {
        v.to_string()
    }
}

/// Monte Carlo risk report for `specs` on `reps` shared replications.
pub fn mc_risk(config: &DgpConfig, specs: &[EstimatorSpec], reps: usize) -> Result<RiskReport> {
    mc_risk_with(config, specs, reps, McOptions::from_env())
}

pub fn mc_risk_with(
    config: &DgpConfig,
    specs: &[EstimatorSpec],
    reps: usize,
    opts: McOptions,
) -> Result<RiskReport> {
    Ok(RiskReport::from_samples(&mc_samples(
        config, specs, reps, opts,
    )?))
}

fn loss_difference(samples: &PairedSamples, a: usize, b: usize) -> MeanSe {
    let diff: Vec<f64> = samples.losses[a]
        .iter()
        .zip(&samples.losses[b])
        .map(|(x, y)| x - y)
        .collect();
    MeanSe::of(&diff)
}

/// Closed-form risk quantities for a configuration with a fixed design.
///
/// With `phi = beta_w' X'hX beta_w + m sigma_w`, the prediction-norm risk of
/// a two-step rule is `m sigma2 + E||gamma_hat - gamma||^2_phi` over the
/// auxiliary problem with `n - 1 - m` draws. For long OLS the second term
/// is `sigma2 tr(phi sigma_w^{-1}) / (n - m - k - 2)` (mean of an inverse
/// Wishart); for short OLS it is `gamma' phi gamma`.
#[derive(Debug, Clone, Serialize)]
pub struct RiskOracle {
    #[serde(serialize_with = "serialize_matrix")]
    pub phi: DMatrix<f64>,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub sigma2: f64,
    #[serde(skip)]
    sigma_w: DMatrix<f64>,
    #[serde(skip)]
    beta_w: DMatrix<f64>,
    #[serde(skip)]
    gamma: DVector<f64>,
}

fn serialize_matrix<S: serde::Serializer>(
    a: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

impl RiskOracle {
    pub fn new(config: &DgpConfig) -> Result<Self> {
        Self::with_design(config, &config.design())
    }

    pub fn with_design(config: &DgpConfig, x: &DMatrix<f64>) -> Result<Self> {
        config.validate()?;
        let xhx = PredictionWeight::new(x).matrix();
        let bw = &config.covariates.beta_w;
        let phi = bw.tr_mul(&(&xhx * bw)) + &config.covariates.sigma_w * config.m as f64;
        cholesky_sqrt(&phi)?;
        Ok(Self {
            phi,
            m: config.m,
            n: config.n,
            k: config.k,
            sigma2: config.params.sigma2,
            sigma_w: config.covariates.sigma_w.clone(),
            beta_w: bw.clone(),
            gamma: config.params.gamma.clone(),
        })
    }

    /// `m sigma2 + sigma2 tr(phi sigma_w^{-1}) / (n - m - k - 2)`; `None`
    /// when the inverse-Wishart mean does not exist (`n <= m + k + 2`).
    pub fn ols_long_risk(&self) -> Option<f64> {
        let dof = self.n as f64 - self.m as f64 - self.k as f64 - 2.0;
        if dof <= 0.0 {
            return None;
        }
        let chol = self.sigma_w.clone().cholesky()?;
        let trace = chol.solve(&self.phi).trace();
        Some(self.m as f64 * self.sigma2 + self.sigma2 * trace / dof)
    }

    /// `m sigma2 + gamma' phi gamma`.
    pub fn ols_short_risk(&self) -> f64 {
        self.m as f64 * self.sigma2 + (&self.phi * &self.gamma).dot(&self.gamma)
    }

    /// Conditional bias `-beta_w (E[gamma_hat] - gamma)` for a given mean first stage.
    pub fn bias_for(&self, mean_gamma_hat: &DVector<f64>) -> DVector<f64> {
        -(&self.beta_w * (mean_gamma_hat - &self.gamma))
    }

    /// Bias of short OLS, `beta_w gamma`.
    pub fn short_bias(&self) -> DVector<f64> {
        &self.beta_w * &self.gamma
    }

    /// Closed-form risk for rules that have one.
    pub fn risk_of(&self, rule: &FirstStage) -> Option<f64> {
        match rule {
            FirstStage::Ols => self.ols_long_risk(),
            FirstStage::Zero => Some(self.ols_short_risk()),
            _ => None,
        }
    }
}

/// The auxiliary prediction problem: training sample of `n - 1 - m` rows with
/// `W_i ~ N(0, sigma_w)`, `Y_i = W_i' gamma + noise`, plus one test point.
struct Auxiliary {
    rows: usize,
    chol_t: DMatrix<f64>,
    gamma: DVector<f64>,
    sigma: f64,
    seed: u64,
}

struct AuxiliaryDraw {
    y: DVector<f64>,
    w: DMatrix<f64>,
    y0: f64,
    w0: DVector<f64>,
}

impl Auxiliary {
    fn new(config: &DgpConfig) -> Result<Self> {
        Ok(Self {
            rows: config.n - 1 - config.m,
            chol_t: cholesky_sqrt(&config.covariates.sigma_w)?.transpose(),
            gamma: config.params.gamma.clone(),
            sigma: config.params.sigma2.sqrt(),
            seed: config.seed,
        })
    }

    fn draw(&self, index: u64) -> AuxiliaryDraw {
        let k = self.gamma.len();
        let rows = self.rows + 1;
        let mut rng = substream(self.seed, Domain::Synthetic, index);
        let z: Vec<f64> = (0..rows * k).map(|_| rng.sample(StandardNormal)).collect();
        let w_all = DMatrix::from_row_slice(rows, k, &z) * &self.chol_t;
        let mut y_all = &w_all * &self.gamma;
        for v in y_all.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += self.sigma * e;
        }
        AuxiliaryDraw {
            y: y_all.rows(1, self.rows).into_owned(),
            w: w_all.rows(1, self.rows).into_owned(),
            y0: y_all[0],
            w0: w_all.row(0).transpose(),
        }
    }
}

/// Outcome of a named check with a human-readable summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.check,
            self.detail
        )
    }
}

/// Paired dominance: `loss_a - loss_b < 0` with `|diff| / se >= min_z`.
///
/// When both arms have round-off sized loss (noiseless configurations,
/// at most `NUMERICAL_FLOOR^2`) there is nothing to compare and the check
/// passes with a note.
pub fn dominance(report: &RiskReport, a: &str, b: &str, min_z: f64) -> CheckOutcome {
    let check = format!("dominance[{a} vs {b}]");
    let Some(pair) = report.pair(a, b) else {
        return CheckOutcome {
            check,
            passed: false,
            detail: "estimator missing from report".into(),
        };
    };
    let zero_risk = [a, b].iter().all(|n| {
        report
            .estimator(n)
            .is_some_and(|e| e.mean_loss <= NUMERICAL_FLOOR * NUMERICAL_FLOOR)
    });
    if zero_risk {
        return CheckOutcome {
            check,
            passed: true,
            detail: "degenerate: zero loss on both arms".into(),
        };
    }
    let z = pair.loss_diff_mean / pair.loss_diff_se;
    CheckOutcome {
        check,
        passed: pair.loss_diff_mean < 0.0 && z.abs() >= min_z,
        detail: format!(
            "diff = {:.6e}, se = {:.3e}, |diff|/se = {:.2} (need diff < 0 and >= {min_z})",
            pair.loss_diff_mean,
            pair.loss_diff_se,
            z.abs()
        ),
    }
}

/// Every bias component within `c` standard errors of zero.
pub fn unbiasedness(report: &RiskReport, c: f64) -> Vec<CheckOutcome> {
    report
        .estimators
        .iter()
        .map(|e| {
            let worst = e
                .bias
                .iter()
                .zip(&e.bias_se)
                .map(|(&b, &se)| (b, se, MeanSe { mean: b, se }.within(0.0, c)))
                .collect::<Vec<_>>();
            let passed = worst.iter().all(|w| w.2);
            let detail = worst
                .iter()
                .enumerate()
                .map(|(j, (b, se, _))| format!("bias_{} = {b:.3e} (se {se:.3e})", j + 1))
                .collect::<Vec<_>>()
                .join(", ");
            CheckOutcome {
                check: format!("unbiasedness[{}]", e.estimator),
                passed,
                detail,
            }
        })
        .collect()
}

/// Monte Carlo bias versus the conditional-bias formula
/// `-beta_w (E[gamma_hat] - gamma)`.
#[derive(Debug, Clone, Serialize)]
pub struct BiasCheck {
    pub estimator: String,
    pub bias: Vec<MeanSe>,
    /// Predicted bias; its standard error is zero when `E[gamma_hat]` is known
    /// in closed form (short and long OLS).
    pub expected: Vec<MeanSe>,
    pub tolerance_se: f64,
    pub passed: bool,
}

impl BiasCheck {
    pub fn outcome(&self) -> CheckOutcome {
        let detail = self
            .bias
            .iter()
            .zip(&self.expected)
            .enumerate()
            .map(|(j, (b, e))| {
                format!(
                    "bias_{} = {:.4e} +- {:.2e}, expected {:.4e} +- {:.2e}",
                    j + 1,
                    b.mean,
                    b.se,
                    e.mean,
                    e.se
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        CheckOutcome {
            check: format!("conditional_bias[{}]", self.estimator),
            passed: self.passed,
            detail,
        }
    }
}

fn agree(a: &MeanSe, b: &MeanSe, c: f64) -> bool {
    let se = (a.se * a.se + b.se * b.se).sqrt();
    (a.mean - b.mean).abs() <= c * se + NUMERICAL_FLOOR * (1.0 + b.mean.abs())
}

pub fn conditional_bias_check(
    config: &DgpConfig,
    spec: &EstimatorSpec,
    reps: usize,
) -> Result<BiasCheck> {
    conditional_bias_check_with(config, spec, reps, McOptions::from_env())
}

pub fn conditional_bias_check_with(
    config: &DgpConfig,
    spec: &EstimatorSpec,
    reps: usize,
    opts: McOptions,
) -> Result<BiasCheck> {
    const TOLERANCE_SE: f64 = 4.0;
    let samples = mc_samples(config, std::slice::from_ref(spec), reps, opts)?;
    let m = config.m;
    let bias: Vec<MeanSe> = (0..m)
        .map(|j| MeanSe::of(&samples.deviation_component(0, j)))
        .collect();

    let oracle = RiskOracle::new(config)?;
    let rule = spec.first_stage(config.n, config.m, config.k)?;
    let expected: Vec<MeanSe> = match rule {
        FirstStage::Zero => exact(oracle.short_bias()),
        FirstStage::Ols => exact(DVector::zeros(m)),
        _ if config.covariates.is_exogenous() => exact(DVector::zeros(m)),
        _ => {
            let aux = Auxiliary::new(config)?;
            let draws = run_replications(reps, opts, |r| {
                let d = aux.draw(r);
                rule.fit(&d.y, &d.w).ok().map(|g| oracle.bias_for(&g))
            })?;
            let failed = draws.iter().filter(|d| d.is_none()).count();
            check_failures(failed, reps)?;
            let draws: Vec<DVector<f64>> = draws.into_iter().flatten().collect();
            (0..m)
                .map(|j| MeanSe::of(&draws.iter().map(|b| b[j]).collect::<Vec<_>>()))
                .collect()
        }
    };
    let passed = bias
        .iter()
        .zip(&expected)
        .all(|(b, e)| agree(b, e, TOLERANCE_SE));
    Ok(BiasCheck {
        estimator: spec.name.clone(),
        bias,
        expected,
        tolerance_se: TOLERANCE_SE,
        passed,
    })
}

fn exact(v: DVector<f64>) -> Vec<MeanSe> {
    v.iter().map(|&mean| MeanSe { mean, se: 0.0 }).collect()
}

/// Regression risk versus `m` times the out-of-sample prediction error of
/// the first-stage rule in the auxiliary problem.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceCheck {
    pub estimator: String,
    pub regression_risk: MeanSe,
    pub prediction_risk: MeanSe,
    pub closed_form: Option<f64>,
    pub passed: bool,
}

impl EquivalenceCheck {
    pub fn outcome(&self) -> CheckOutcome {
        let closed = self
            .closed_form
            .map_or(String::new(), |c| format!(", closed form {c:.5}"));
        CheckOutcome {
            check: format!("prediction_equivalence[{}]", self.estimator),
            passed: self.passed,
            detail: format!(
                "regression {:.5} +- {:.2e}, prediction {:.5} +- {:.2e}{closed}",
                self.regression_risk.mean,
                self.regression_risk.se,
                self.prediction_risk.mean,
                self.prediction_risk.se
            ),
        }
    }
}

pub fn prediction_equivalence_check(
    config: &DgpConfig,
    spec: &EstimatorSpec,
    reps: usize,
) -> Result<EquivalenceCheck> {
    prediction_equivalence_check_with(config, spec, reps, McOptions::from_env())
}

pub fn prediction_equivalence_check_with(
    config: &DgpConfig,
    spec: &EstimatorSpec,
    reps: usize,
    opts: McOptions,
) -> Result<EquivalenceCheck> {
    const TOLERANCE_SE: f64 = 4.0;
    if !config.covariates.is_exogenous() {
        return Err(Error::config(
            "beta_w",
            "the prediction equivalence requires beta_w = 0",
        ));
    }
    let samples = mc_samples(config, std::slice::from_ref(spec), reps, opts)?;
    let regression_risk = MeanSe::of(&samples.losses[0]);

    let rule = spec.first_stage(config.n, config.m, config.k)?;
    let aux = Auxiliary::new(config)?;
    let m = config.m as f64;
    let errors = run_replications(reps, opts, |r| {
        let d = aux.draw(r);
        rule.fit(&d.y, &d.w).ok().map(|g| {
            let e = d.y0 - d.w0.dot(&g);
            m * e * e
        })
    })?;
    let failed = errors.iter().filter(|e| e.is_none()).count();
    check_failures(failed, reps)?;
    let errors: Vec<f64> = errors.into_iter().flatten().collect();
    let prediction_risk = MeanSe::of(&errors);

    let closed_form = RiskOracle::new(config)?.risk_of(&rule);
    let passed = agree(&regression_risk, &prediction_risk, TOLERANCE_SE);
    Ok(EquivalenceCheck {
        estimator: spec.name.clone(),
        regression_risk,
        prediction_risk,
        closed_form,
        passed,
    })
}

/// Conditional on fixed `(x, w)`: `E||mu_x_hat - mu_x||^2` versus
/// `m sigma2 + E||mu_w_hat - mu_w||^2_{a'a}`, estimated on the same draws.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionCheck {
    pub estimator: String,
    pub lhs: MeanSe,
    pub rhs: MeanSe,
    pub difference: MeanSe,
    pub closed_form: Option<f64>,
    pub passed: bool,
}

impl DecompositionCheck {
    pub fn outcome(&self) -> CheckOutcome {
        let closed = self
            .closed_form
            .map_or(String::new(), |c| format!(", closed form {c:.5}"));
        CheckOutcome {
            check: format!("decomposition[{}]", self.estimator),
            passed: self.passed,
            detail: format!(
                "lhs {:.5} +- {:.2e}, rhs {:.5} +- {:.2e}, paired diff {:.3e} +- {:.2e}{closed}",
                self.lhs.mean,
                self.lhs.se,
                self.rhs.mean,
                self.rhs.se,
                self.difference.mean,
                self.difference.se
            ),
        }
    }
}

pub fn loss_decomposition_check(
    config: &DgpConfig,
    w: &DMatrix<f64>,
    spec: &EstimatorSpec,
    reps: usize,
) -> Result<DecompositionCheck> {
    loss_decomposition_check_with(config, w, spec, reps, McOptions::from_env())
}

/// Outcomes are redrawn on replication substreams with `w` held fixed; the
/// design comes from `config`.
pub fn loss_decomposition_check_with(
    config: &DgpConfig,
    w: &DMatrix<f64>,
    spec: &EstimatorSpec,
    reps: usize,
    opts: McOptions,
) -> Result<DecompositionCheck> {
    const TOLERANCE_SE: f64 = 4.0;
    if reps < 2 {
        return Err(Error::config(
            "reps",
            "at least 2 replications are required",
        ));
    }
    spec.validate(config.k)?;
    let dgp = Dgp::new(config.clone())?;
    let x = dgp.x();
    if w.shape() != (config.n, config.k) {
        return Err(Error::Dimension(format!(
            "w must be {}x{}",
            config.n, config.k
        )));
    }
    let basis = build_basis(x, w)?;
    let qx_x = basis.qx().tr_mul(x);
    let qw_w = basis.qw().tr_mul(w);
    let qx_w = basis.qx().tr_mul(w);
    let a = qw_w
        .transpose()
        .lu()
        .solve(&qx_w.transpose())
        .ok_or_else(|| Error::Singular("qw' w is singular".into()))?
        .transpose();
    let beta = &config.params.beta;
    let gamma = &config.params.gamma;
    let mu_w = &qw_w * gamma;
    let sigma2 = config.params.sigma2;
    let m_sigma2 = config.m as f64 * sigma2;

    let outcomes = run_replications(reps, opts, |r| {
        let data = dgp.simulate_given_w(w, r);
        spec.estimate(&data).ok().map(|est| {
            let lhs = (&qx_x * (&est.beta_hat - beta)).norm_squared();
            let rhs = m_sigma2 + (&a * (&qw_w * &est.gamma_hat - &mu_w)).norm_squared();
            (lhs, rhs)
        })
    })?;
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    check_failures(failed, reps)?;
    let (lhs, rhs): (Vec<f64>, Vec<f64>) = outcomes.into_iter().flatten().unzip();
    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(l, r)| l - r).collect();
    let (lhs, rhs, difference) = (MeanSe::of(&lhs), MeanSe::of(&rhs), MeanSe::of(&diff));

    let closed_form = match spec.first_stage(config.n, config.m, config.k)? {
        FirstStage::Ols => Some(m_sigma2 + sigma2 * a.norm_squared()),
        FirstStage::Zero => Some(m_sigma2 + (&a * &mu_w).norm_squared()),
        _ => None,
    };
    let passed = difference.within(0.0, TOLERANCE_SE)
        && closed_form.is_none_or(|c| lhs.within(c, TOLERANCE_SE));
    Ok(DecompositionCheck {
        estimator: spec.name.clone(),
        lhs,
        rhs,
        difference,
        closed_form,
        passed,
    })
}

/// For `m = 1`: `a` unbiased within 4 SEs and `Var(a) < Var(b)` shown by the
/// paired difference of squared deviations, `|diff| / se >= min_z`.
pub fn gauss_markov_check(samples: &PairedSamples, a: &str, b: &str, min_z: f64) -> CheckOutcome {
    let check = format!("gauss_markov[{a} vs {b}]");
    let (Some(ia), Some(ib)) = (samples.index_of(a), samples.index_of(b)) else {
        return CheckOutcome {
            check,
            passed: false,
            detail: "estimator missing".into(),
        };
    };
    if samples.m != 1 {
        return CheckOutcome {
            check,
            passed: false,
            detail: format!("needs m = 1, got m = {}", samples.m),
        };
    }
    let da = samples.deviation_component(ia, 0);
    let db = samples.deviation_component(ib, 0);
    let bias_a = MeanSe::of(&da);
    let bias_b = MeanSe::of(&db);
    let sq: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x * x - y * y).collect();
    let diff = MeanSe::of(&sq);
    let z = diff.mean / diff.se;
    CheckOutcome {
        check,
        passed: bias_a.within(0.0, 4.0)
            && bias_b.within(0.0, 4.0)
            && diff.mean < 0.0
            && z.abs() >= min_z,
        detail: format!(
            "bias {:.3e} vs {:.3e}; E[dev^2] diff {:.4e} +- {:.2e} (|z| = {:.2})",
            bias_a.mean,
            bias_b.mean,
            diff.mean,
            diff.se,
            z.abs()
        ),
    }
}

/// Data-level invariances of `spec` on `data`: rotating the controls leaves
/// `beta_hat` unchanged, adding `c + x d` to `y` shifts it by `d`, and
/// scaling `y` by `c > 0` scales it by `c`. Relative tolerance `tol`.
pub fn invariance_check<R: Rng + ?Sized>(
    data: &RegressionData,
    spec: &EstimatorSpec,
    rng: &mut R,
    tol: f64,
) -> Result<CheckOutcome> {
    let (m, k) = (data.m(), data.k());
    let base = spec.estimate(data)?.beta_hat;
    let scale = base.amax().max(1.0);

    let rotation = random_orthogonal(k, rng);
    let rotated_spec = transform_spec(spec, |sigma2, tau2, sigma_w| {
        (sigma2, tau2, rotation.tr_mul(&(sigma_w * &rotation)))
    });
    let rotated = RegressionData {
        w: &data.w * &rotation,
        ..data.clone()
    };
    let rotation_err = (rotated_spec.estimate(&rotated)?.beta_hat - &base).amax();

    let c: f64 = rng.sample(StandardNormal);
    let d = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y = &data.y + &data.x * &d;
    y.add_scalar_mut(c);
    let shifted = RegressionData { y, ..data.clone() };
    let translation_err = (spec.estimate(&shifted)?.beta_hat - (&base + &d)).amax();

    let factor = rng.sample::<f64, _>(StandardNormal).exp();
    let scaled_spec = transform_spec(spec, |sigma2, tau2, sigma_w| {
        (
            sigma2 * factor * factor,
            tau2 * factor * factor,
            sigma_w.clone(),
        )
    });
    let scaled = RegressionData {
        y: &data.y * factor,
        ..data.clone()
    };
    let scale_err =
        (scaled_spec.estimate(&scaled)?.beta_hat - &base * factor).amax() / factor.max(1.0);

    let worst = rotation_err.max(translation_err).max(scale_err) / scale;
    Ok(CheckOutcome {
        check: format!("invariance[{}]", spec.name),
        passed: worst <= tol,
        detail: format!(
            "rotation {rotation_err:.2e}, translation {translation_err:.2e}, scale {scale_err:.2e} (relative worst {worst:.2e}, tol {tol:e})"
        ),
    })
}

/// Generalized-Bayes hyperparameters follow the data transformation; other
/// rules have none.
fn transform_spec(
    spec: &EstimatorSpec,
    f: impl Fn(f64, f64, &DMatrix<f64>) -> (f64, f64, DMatrix<f64>),
) -> EstimatorSpec {
    match &spec.kind {
        EstimatorKind::GeneralizedBayes {
            sigma2,
            tau2,
            sigma_w,
        } => {
            let (sigma2, tau2, sigma_w) = f(*sigma2, *tau2, sigma_w);
            EstimatorSpec {
                name: spec.name.clone(),
                kind: EstimatorKind::GeneralizedBayes {
                    sigma2,
                    tau2,
                    sigma_w,
                },
            }
        }
        _ => spec.clone(),
    }
}

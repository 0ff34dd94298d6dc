//! Command-line front end: `estimate`, `simulate` and `sweep`.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::estimators::{EstimateResult, EstimatorKind, EstimatorSpec};
use crate::linalg::{design_matrix, LeastSquares};
use crate::model::{Dgp, DgpConfig, MatrixRepr, RegressionData};
use crate::risk::{
    conditional_bias_check_with, dominance, fmt_f64, invariance_check,
    loss_decomposition_check_with, mc_samples, prediction_equivalence_check_with, CheckOutcome,
    McOptions, RiskOracle, RiskReport,
};
use crate::rng::{substream, Domain};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

/// Replications required before any standard-error based check is run.
pub const MIN_CHECK_REPS: usize = 100;

#[derive(Debug, Parser)]
#[command(
    name = "shrinkreg",
    version,
    about = "Unbiased partial shrinkage for linear regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate treatment coefficients from a CSV file with header y,x1..xm,w1..wk.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Repeat an experiment over a grid of one parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorFlag {
    #[value(name = "ols-long")]
    OlsLong,
    #[value(name = "ols-short")]
    OlsShort,
    Shrink,
    #[value(name = "shrink-pp")]
    ShrinkPp,
    Eb,
    Gbayes,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "shrink")]
    estimator: EstimatorFlag,
    /// Shrink weight; defaults to (k - 2) / (n - m - k - 1).
    #[arg(long)]
    p: Option<f64>,
    /// Prior scale for gbayes (required there).
    #[arg(long)]
    tau2: Option<f64>,
    /// Noise variance for gbayes; defaults to SSR / (n - 1 - m - k).
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also write the first N replication datasets as CSV under `datasets/`.
    #[arg(long, value_name = "N", default_value_t = 0)]
    dump_datasets: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    #[value(name = "gamma_scale")]
    GammaScale,
    K,
    P,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::GammaScale => "gamma_scale",
            SweepAxis::K => "k",
            SweepAxis::P => "p",
        })
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
}

/// Checks an experiment may request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Dominance,
    Unbiasedness,
    #[serde(alias = "lemma1")]
    ConditionalBias,
    #[serde(alias = "corollary_equivalence")]
    PredictionEquivalence,
    Decomposition,
    Invariance,
}

impl Check {
    fn name(self) -> &'static str {
        match self {
            Check::Dominance => "dominance",
            Check::Unbiasedness => "unbiasedness",
            Check::ConditionalBias => "conditional_bias",
            Check::PredictionEquivalence => "prediction_equivalence",
            Check::Decomposition => "decomposition",
            Check::Invariance => "invariance",
        }
    }

    fn uses_standard_errors(self) -> bool {
        self != Check::Invariance
    }
}

/// Experiment description read from JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub reps: usize,
    pub output: Option<PathBuf>,
    pub checks: Vec<Check>,
    /// Standardized distance required by the dominance check.
    pub dominance_min_z: f64,
}

/// A config problem located by a JSON path such as `estimators[1].p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(path: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.to_string(),
    }
}

/// Prefix a library error with the JSON object it came from.
fn located(prefix: &str, e: Error) -> ConfigError {
    match e {
        Error::Config { field, reason } => config_error(format!("{prefix}.{field}"), reason),
        other => config_error(prefix, other),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    dgp: Value,
    estimators: Vec<Value>,
    reps: usize,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    checks: Vec<Value>,
    #[serde(default)]
    dominance_min_z: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    estimator: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    tau2: Option<f64>,
    #[serde(default)]
    sigma2: Option<f64>,
    #[serde(default)]
    sigma_w: Option<MatrixRepr>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: RawExperiment = serde_json::from_str(text).map_err(|e| config_error("$", e))?;
        let dgp: DgpConfig = serde_json::from_value(raw.dgp).map_err(|e| config_error("dgp", e))?;
        let estimators = raw
            .estimators
            .into_iter()
            .enumerate()
            .map(|(i, v)| parse_estimator(v, &dgp, &format!("estimators[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let checks = raw
            .checks
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value(v).map_err(|e| config_error(format!("checks[{i}]"), e))
            })
            .collect::<Result<Vec<Check>, _>>()?;
        let config = Self {
            dgp,
            estimators,
            reps: raw.reps,
            output: raw.output,
            checks,
            dominance_min_z: raw.dominance_min_z.unwrap_or(5.0),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dgp.validate().map_err(|e| located("dgp", e))?;
        if self.estimators.is_empty() {
            return Err(config_error(
                "estimators",
                "at least one estimator is required",
            ));
        }
        for (i, spec) in self.estimators.iter().enumerate() {
            let path = format!("estimators[{i}]");
            spec.validate(self.dgp.k).map_err(|e| located(&path, e))?;
            if self.estimators[..i].iter().any(|s| s.name == spec.name) {
                return Err(config_error(
                    format!("{path}.name"),
                    format!("duplicate estimator name `{}`", spec.name),
                ));
            }
        }
        if self.reps < 2 {
            return Err(config_error("reps", "at least 2 replications are required"));
        }
        if self.reps < MIN_CHECK_REPS && self.checks.iter().any(|c| c.uses_standard_errors()) {
            return Err(config_error(
                "reps",
                format!("checks need reps >= {MIN_CHECK_REPS}, got {}", self.reps),
            ));
        }
        if !(self.dominance_min_z >= 0.0) {
            return Err(config_error("dominance_min_z", "must be non-negative"));
        }
        if self.checks.contains(&Check::PredictionEquivalence)
            && !self.dgp.covariates.is_exogenous()
        {
            return Err(config_error(
                "dgp.beta_w",
                "prediction_equivalence needs beta_w = 0",
            ));
        }
        Ok(())
    }
}

fn parse_estimator(
    value: Value,
    dgp: &DgpConfig,
    path: &str,
) -> Result<EstimatorSpec, ConfigError> {
    let raw: RawEstimator = serde_json::from_value(value).map_err(|e| config_error(path, e))?;
    let field = |name: &str| format!("{path}.{name}");
    let no_p = |raw: &RawEstimator| match raw.p {
        Some(_) => Err(config_error(
            field("p"),
            format!("`p` does not apply to `{}`", raw.estimator),
        )),
        None => Ok(()),
    };
    let no_gbayes = |raw: &RawEstimator| {
        for (name, set) in [
            ("tau2", raw.tau2.is_some()),
            ("sigma2", raw.sigma2.is_some()),
            ("sigma_w", raw.sigma_w.is_some()),
        ] {
            if set {
                return Err(config_error(
                    field(name),
                    format!("`{name}` only applies to `gbayes`"),
                ));
            }
        }
        Ok(())
    };
    let kind = match raw.estimator.as_str() {
        "ols-long" | "ols-short" | "eb" => {
            no_p(&raw)?;
            no_gbayes(&raw)?;
            match raw.estimator.as_str() {
                "ols-long" => EstimatorKind::OlsLong,
                "ols-short" => EstimatorKind::OlsShort,
                _ => EstimatorKind::EmpiricalBayes,
            }
        }
        "shrink" | "shrink-pp" => {
            no_gbayes(&raw)?;
            if raw.estimator == "shrink" {
                EstimatorKind::Shrink { p: raw.p }
            } else {
                EstimatorKind::ShrinkPositivePart { p: raw.p }
            }
        }
        "gbayes" => {
            no_p(&raw)?;
            let tau2 = raw.tau2.ok_or_else(|| config_error(field("tau2"), "required for gbayes"))?;
            let sigma_w = match raw.sigma_w.clone() {
                Some(s) => s.into_matrix("sigma_w", dgp.k, dgp.k).map_err(|e| located(path, e))?,
                None => dgp.covariates.sigma_w.clone(),
            };
            EstimatorKind::GeneralizedBayes { sigma2: raw.sigma2.unwrap_or(dgp.params.sigma2), tau2, sigma_w }
        }
        other => {
            return Err(config_error(
                field("estimator"),
                format!("unknown estimator `{other}`; expected one of ols-long, ols-short, shrink, shrink-pp, eb, gbayes"),
            ))
        }
    };
    let spec = EstimatorSpec::new(kind);
    Ok(match raw.name {
        Some(name) => spec.named(name),
        None => spec,
    })
}

/// Run the command line `args` (including the program name), writing to
/// the given streams. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(&args, stdout, stderr),
        Command::Simulate(args) => cmd_simulate(&args, stdout, stderr),
        Command::Sweep(args) => cmd_sweep(&args, stdout, stderr),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(stderr, "error: {}", failure.message);
            failure.code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INVALID_INPUT,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::input(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::input(e)
    }
}

/// Estimation errors: rank and definiteness problems exit 3, bad inputs 2.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_INVALID_INPUT,
            _ => EXIT_ESTIMATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Read a dataset with header `y,x1..xm,w1..wk`.
pub fn read_dataset(path: &Path) -> Result<RegressionData, String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_dataset(file)
}

fn parse_dataset<R: std::io::Read>(reader: R) -> Result<RegressionData, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| describe_csv_error(&e))?.clone();
    let (m, k) = parse_header(&header).map_err(|e| format!("line 1: {e}"))?;
    let width = 1 + m + k;
    let mut values = Vec::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| describe_csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                format!(
                    "line {line}: column `{}` is not a number: `{field}`",
                    &header[j]
                )
            })?;
            if !v.is_finite() {
                return Err(format!(
                    "line {line}: column `{}` is not finite",
                    &header[j]
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err("line 2: no data rows".into());
    }
    let all = DMatrix::from_row_slice(rows, width, &values);
    RegressionData::new(
        all.column(0).into_owned(),
        all.columns(1, m).into_owned(),
        all.columns(1 + m, k).into_owned(),
    )
    .map_err(|e| e.to_string())
}

fn describe_csv_error(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => format!(
            "line {}: expected {expected_len} fields, found {len}",
            pos.as_ref().map_or(0, |p| p.line())
        ),
        _ => match e.position() {
            Some(p) => format!("line {}: {e}", p.line()),
            None => e.to_string(),
        },
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize), String> {
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"y") {
        return Err("header must start with `y`".into());
    }
    let m = names[1..].iter().take_while(|n| n.starts_with('x')).count();
    let k = names.len() - 1 - m;
    if m == 0 {
        return Err("header needs at least one treatment column `x1`".into());
    }
    for (i, name) in names[1..=m].iter().enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(format!("expected column `x{}`, found `{name}`", i + 1));
        }
    }
    for (i, name) in names[1 + m..].iter().enumerate() {
        if *name != format!("w{}", i + 1) {
            return Err(format!("expected column `w{}`, found `{name}`", i + 1));
        }
    }
    Ok((m, k))
}

/// Write `data` in the format [`read_dataset`] accepts, with shortest
/// round-trip floats.
pub fn write_dataset<W: Write>(data: &RegressionData, out: W) -> Result<(), String> {
    let (n, m, k) = (data.n(), data.m(), data.k());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=m).map(|j| format!("x{j}")));
    header.extend((1..=k).map(|j| format!("w{j}")));
    wtr.write_record(&header).map_err(|e| e.to_string())?;
    for i in 0..n {
        let mut row = vec![fmt_f64(data.y[i])];
        row.extend((0..m).map(|j| fmt_f64(data.x[(i, j)])));
        row.extend((0..k).map(|j| fmt_f64(data.w[(i, j)])));
        wtr.write_record(&row).map_err(|e| e.to_string())?;
    }
    wtr.flush().map_err(|e| e.to_string())
}

fn estimate_spec(args: &EstimateArgs, data: &RegressionData) -> Result<EstimatorSpec, Failure> {
    if args.p.is_some()
        && !matches!(
            args.estimator,
            EstimatorFlag::Shrink | EstimatorFlag::ShrinkPp
        )
    {
        return Err(Failure::input("--p only applies to shrink and shrink-pp"));
    }
    if (args.tau2.is_some() || args.sigma2.is_some()) && args.estimator != EstimatorFlag::Gbayes {
        return Err(Failure::input("--tau2 and --sigma2 only apply to gbayes"));
    }
    Ok(match args.estimator {
        EstimatorFlag::OlsLong => EstimatorSpec::ols_long(),
        EstimatorFlag::OlsShort => EstimatorSpec::ols_short(),
        EstimatorFlag::Shrink => EstimatorSpec::shrink(args.p),
        EstimatorFlag::ShrinkPp => EstimatorSpec::shrink_positive_part(args.p),
        EstimatorFlag::Eb => EstimatorSpec::empirical_bayes(),
        EstimatorFlag::Gbayes => {
            let tau2 = args
                .tau2
                .ok_or_else(|| Failure::input("gbayes needs --tau2"))?;
            let (sigma2_hat, sigma_w_hat) = plug_in_hyperparameters(data)?;
            EstimatorSpec::generalized_bayes(args.sigma2.unwrap_or(sigma2_hat), tau2, sigma_w_hat)
        }
    })
}

/// `SSR / (n - 1 - m - k)` and the within covariance `W'MW / (n - 1 - m)`.
fn plug_in_hyperparameters(data: &RegressionData) -> Result<(f64, DMatrix<f64>), Error> {
    let (n, m, k) = (data.n(), data.m(), data.k());
    if n <= 1 + m + k {
        return Err(Error::Undefined(format!(
            "plug-in sigma2 needs n > 1 + m + k (n = {n})"
        )));
    }
    let long = LeastSquares::new(design_matrix(&data.x, Some(&data.w)), m)?;
    let sigma2 = long.residual(&data.y).norm_squared() / (n - 1 - m - k) as f64;
    let short = LeastSquares::new(design_matrix(&data.x, None), m)?;
    let ew = short.residual_matrix(&data.w);
    let sigma_w = ew.tr_mul(&ew) / (n - 1 - m) as f64;
    Ok((sigma2, sigma_w))
}

fn cmd_estimate(
    args: &EstimateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let data = read_dataset(&args.input)
        .map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?;
    let spec = estimate_spec(args, &data)?;
    let result = spec.estimate(&data)?;
    for w in &result.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let json = serde_json::to_string_pretty(&result).map_err(Failure::input)?;
    writeln!(stdout, "{json}").map_err(Failure::input)?;
    Ok(EXIT_OK)
}

fn load_experiment(run: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let text = fs::read_to_string(&run.config).map_err(|e| Failure::io(&run.config, e))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(reps) = run.reps {
        config.reps = reps;
    }
    if let Some(seed) = run.seed {
        config.dgp.seed = seed;
    }
    config.validate()?;
    let out = run
        .out
        .clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| {
            Failure::from(config_error(
                "output",
                "no output directory: set `output` or pass --out",
            ))
        })?;
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    Ok((config, out))
}

#[derive(Debug, Serialize)]
struct EstimatorWarning {
    estimator: String,
    warning: String,
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    #[serde(flatten)]
    oracle: RiskOracle,
    ols_long_risk: Option<f64>,
    ols_short_risk: f64,
    short_bias: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct CheckSummary {
    check: &'static str,
    passed: bool,
    results: Vec<CheckOutcome>,
}

#[derive(Debug, Serialize)]
struct SimulationReport {
    config: DgpConfig,
    #[serde(flatten)]
    risk: RiskReport,
    oracle: OracleSummary,
    warnings: Vec<EstimatorWarning>,
    checks: Vec<CheckSummary>,
}

/// Warnings raised by each estimator on the first replication.
fn representative_warnings(dgp: &Dgp, specs: &[EstimatorSpec]) -> Vec<EstimatorWarning> {
    let data = dgp.simulate(0);
    let mut out = Vec::new();
    for spec in specs {
        match spec.estimate(&data) {
            Ok(result) => out.extend(result.warnings.iter().map(|w| EstimatorWarning {
                estimator: spec.name.clone(),
                warning: w.to_string(),
            })),
            Err(e) => out.push(EstimatorWarning {
                estimator: spec.name.clone(),
                warning: format!("estimation failed: {e}"),
            }),
        }
    }
    out
}

fn run_check(
    check: Check,
    config: &ExperimentConfig,
    report: &RiskReport,
    opts: McOptions,
) -> Result<CheckSummary, Error> {
    let dgp = &config.dgp;
    let results = match check {
        Check::Dominance => {
            if report.estimator("ols-long").is_none() {
                vec![CheckOutcome {
                    check: "dominance".into(),
                    passed: false,
                    detail: "needs an estimator named `ols-long` as the baseline".into(),
                }]
            } else {
                config
                    .estimators
                    .iter()
                    .filter(|s| s.is_shrinkage())
                    .map(|s| dominance(report, &s.name, "ols-long", config.dominance_min_z))
                    .collect()
            }
        }
        Check::Unbiasedness => crate::risk::unbiasedness(report, 4.0),
        Check::ConditionalBias => config
            .estimators
            .iter()
            .map(|s| conditional_bias_check_with(dgp, s, config.reps, opts).map(|c| c.outcome()))
            .collect::<Result<_, _>>()?,
        Check::PredictionEquivalence => config
            .estimators
            .iter()
            .map(|s| {
                prediction_equivalence_check_with(dgp, s, config.reps, opts).map(|c| c.outcome())
            })
            .collect::<Result<_, _>>()?,
        Check::Decomposition => {
            let w = Dgp::new(dgp.clone())?.fixed_controls();
            config
                .estimators
                .iter()
                .map(|s| {
                    loss_decomposition_check_with(dgp, &w, s, config.reps, opts)
                        .map(|c| c.outcome())
                })
                .collect::<Result<_, _>>()?
        }
        Check::Invariance => {
            let data = Dgp::new(dgp.clone())?.simulate(0);
            let mut rng = substream(dgp.seed, Domain::Auxiliary, 1);
            config
                .estimators
                .iter()
                .map(|s| invariance_check(&data, s, &mut rng, 1e-9))
                .collect::<Result<_, _>>()?
        }
    };
    let passed = !results.is_empty() && results.iter().all(|r| r.passed);
    Ok(CheckSummary {
        check: check.name(),
        passed,
        results,
    })
}

fn summary_line(summary: &CheckSummary) -> String {
    let detail = if summary.results.is_empty() {
        "nothing to check".to_string()
    } else {
        summary
            .results
            .iter()
            .map(|r| format!("{} {}", r.check, r.detail))
            .collect::<Vec<_>>()
            .join("; ")
    };
    format!(
        "{} {}: {detail}",
        if summary.passed { "PASS" } else { "FAIL" },
        summary.check
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn cmd_simulate(
    args: &SimulateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let (config, out) = load_experiment(&args.run)?;
    let opts = McOptions::from_env();
    let dgp = Dgp::new(config.dgp.clone())?;

    if args.dump_datasets > 0 {
        let dir = out.join("datasets");
        fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
        for r in 0..args.dump_datasets {
            let mut buf = Vec::new();
            write_dataset(&dgp.simulate(r as u64), &mut buf).map_err(Failure::input)?;
            write_file(&dir.join(format!("replication_{r}.csv")), &buf)?;
        }
    }

    let warnings = representative_warnings(&dgp, &config.estimators);
    for w in &warnings {
        let _ = writeln!(stderr, "warning [{}]: {}", w.estimator, w.warning);
    }

    let samples = mc_samples(&config.dgp, &config.estimators, config.reps, opts)?;
    let risk = RiskReport::from_samples(&samples);
    let checks = config
        .checks
        .iter()
        .map(|&c| run_check(c, &config, &risk, opts))
        .collect::<Result<Vec<_>, _>>()?;

    let oracle = RiskOracle::with_design(&config.dgp, dgp.x())?;
    let oracle = OracleSummary {
        ols_long_risk: oracle.ols_long_risk(),
        ols_short_risk: oracle.ols_short_risk(),
        short_bias: oracle.short_bias().as_slice().to_vec(),
        oracle,
    };

    let mut buf = Vec::new();
    risk.write_estimator_csv(&mut buf)?;
    write_file(&out.join("risk_estimators.csv"), &buf)?;
    let mut buf = Vec::new();
    risk.write_pairs_csv(&mut buf)?;
    write_file(&out.join("risk_pairs.csv"), &buf)?;

    let report = SimulationReport {
        config: config.dgp.clone(),
        risk,
        oracle,
        warnings,
        checks,
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(Failure::input)?;
    json.push('\n');
    write_file(&out.join("report.json"), json.as_bytes())?;

    let mut failed = false;
    for summary in &report.checks {
        failed |= !summary.passed;
        writeln!(stdout, "{}", summary_line(summary)).map_err(Failure::input)?;
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { EXIT_OK })
}

/// The experiment at one point of a sweep.
pub fn sweep_point(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<ExperimentConfig, ConfigError> {
    let mut config = base.clone();
    match axis {
        SweepAxis::GammaScale => {
            if !value.is_finite() {
                return Err(config_error("values", "gamma_scale values must be finite"));
            }
            config.dgp.params.gamma *= value;
        }
        SweepAxis::P => {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(config_error(
                    "values",
                    format!("p must be finite and non-negative, got {value}"),
                ));
            }
            let mut any = false;
            for spec in &mut config.estimators {
                if let EstimatorKind::Shrink { p } | EstimatorKind::ShrinkPositivePart { p } =
                    &mut spec.kind
                {
                    *p = Some(value);
                    any = true;
                }
            }
            if !any {
                return Err(config_error(
                    "estimators",
                    "a p sweep needs a shrink or shrink-pp estimator",
                ));
            }
        }
        SweepAxis::K => {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(config_error(
                    "values",
                    format!("k must be a non-negative integer, got {value}"),
                ));
            }
            resize_controls(&mut config, value as usize)?;
        }
    }
    config.validate()?;
    Ok(config)
}

/// Change the number of controls of an exchangeable base config: equal
/// entries of `gamma` and `alpha_w`, `beta_w` with constant rows, and
/// `sigma_w = c I`.
fn resize_controls(config: &mut ExperimentConfig, k: usize) -> Result<(), ConfigError> {
    let dgp = &mut config.dgp;
    let k0 = dgp.k;
    if k0 == 0 {
        return Err(config_error(
            "dgp.k",
            "a k sweep needs a base config with at least one control",
        ));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if !constant(dgp.params.gamma.as_slice()) {
        return Err(config_error(
            "dgp.gamma",
            "a k sweep needs equal gamma entries",
        ));
    }
    if !constant(dgp.covariates.alpha_w.as_slice()) {
        return Err(config_error(
            "dgp.alpha_w",
            "a k sweep needs equal alpha_w entries",
        ));
    }
    if dgp
        .covariates
        .beta_w
        .row_iter()
        .any(|r| !r.iter().all(|x| *x == r[0]))
    {
        return Err(config_error(
            "dgp.beta_w",
            "a k sweep needs beta_w rows with equal entries",
        ));
    }
    let isotropic = |s: &DMatrix<f64>| *s == DMatrix::identity(s.nrows(), s.ncols()) * s[(0, 0)];
    if !isotropic(&dgp.covariates.sigma_w) {
        return Err(config_error(
            "dgp.sigma_w",
            "a k sweep needs sigma_w proportional to the identity",
        ));
    }
    let scale = dgp.covariates.sigma_w[(0, 0)];
    let beta_w_col = dgp.covariates.beta_w.column(0).into_owned();
    dgp.k = k;
    dgp.params.gamma = DVector::from_element(k, dgp.params.gamma[0]);
    dgp.covariates.alpha_w = DVector::from_element(k, dgp.covariates.alpha_w[0]);
    dgp.covariates.beta_w = DMatrix::from_fn(dgp.m, k, |i, _| beta_w_col[i]);
    dgp.covariates.sigma_w = DMatrix::identity(k, k) * scale;
    for (i, spec) in config.estimators.iter_mut().enumerate() {
        if let EstimatorKind::GeneralizedBayes { sigma_w, .. } = &mut spec.kind {
            if !isotropic(sigma_w) {
                return Err(config_error(
                    format!("estimators[{i}].sigma_w"),
                    "a k sweep needs gbayes sigma_w proportional to the identity",
                ));
            }
            *sigma_w = DMatrix::identity(k, k) * sigma_w[(0, 0)];
        }
    }
    Ok(())
}

fn axis_label(axis: SweepAxis, value: f64) -> String {
    match axis {
        SweepAxis::K => format!("{}", value as usize),
        _ => fmt_f64(value),
    }
}

/// Long-format sweep table: one row per axis value and estimator.
pub fn write_sweep_csv<W: Write>(
    axis: SweepAxis,
    points: &[(f64, RiskReport)],
    m: usize,
    out: W,
) -> Result<(), String> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![
        "axis".to_string(),
        "axis_value".into(),
        "estimator".into(),
        "mean_loss".into(),
        "loss_se".into(),
    ];
    header.extend((1..=m).map(|j| format!("bias_{j}")));
    header.extend((1..=m).map(|j| format!("bias_se_{j}")));
    header.push("reps".into());
    wtr.write_record(&header).map_err(|e| e.to_string())?;
    for (value, report) in points {
        for e in &report.estimators {
            let mut row = vec![
                axis.to_string(),
                axis_label(axis, *value),
                e.estimator.clone(),
                fmt_f64(e.mean_loss),
                fmt_f64(e.loss_se),
            ];
            row.extend(e.bias.iter().map(|&v| fmt_f64(v)));
            row.extend(e.bias_se.iter().map(|&v| fmt_f64(v)));
            row.push(e.reps.to_string());
            wtr.write_record(&row).map_err(|e| e.to_string())?;
        }
    }
    wtr.flush().map_err(|e| e.to_string())
}

fn cmd_sweep(
    args: &SweepArgs,
    stdout: &mut dyn Write,
    _stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let (base, out) = load_experiment(&args.run)?;
    let opts = McOptions::from_env();
    let mut points = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let config = sweep_point(&base, args.axis, value)?;
        let samples = mc_samples(&config.dgp, &config.estimators, config.reps, opts)?;
        points.push((value, RiskReport::from_samples(&samples)));
    }
    let mut buf = Vec::new();
    write_sweep_csv(args.axis, &points, base.dgp.m, &mut buf).map_err(Failure::input)?;
    let path = out.join("sweep.csv");
    write_file(&path, &buf)?;
    writeln!(stdout, "wrote {}", path.display()).map_err(Failure::input)?;
    Ok(EXIT_OK)
}

/// Convenience for tests and embedding: the estimate `cmd_estimate` prints.
pub fn estimate_file(path: &Path, spec: &EstimatorSpec) -> Result<EstimateResult, String> {
    let data = read_dataset(path)?;
    spec.estimate(&data).map_err(|e| e.to_string())
}

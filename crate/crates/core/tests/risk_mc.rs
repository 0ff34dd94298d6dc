use nalgebra::{DMatrix, DVector};
use shrinkreg::estimators::EstimatorSpec;
use shrinkreg::model::{Dgp, DgpConfig};
use shrinkreg::risk::{
    conditional_bias_check_with, gauss_markov_check, loss_decomposition_check_with, mc_risk_with,
    mc_samples, prediction_equivalence_check_with, McOptions, RiskOracle,
};

const REPS: usize = 20_000;

fn opts() -> McOptions {
    McOptions::default()
}

fn exogenous(n: usize, m: usize, gamma: Vec<f64>, sigma2: f64, seed: u64) -> DgpConfig {
    let k = gamma.len();
    DgpConfig::exogenous(
        n,
        DVector::from_element(m, 1.0),
        DVector::from_vec(gamma),
        sigma2,
        DMatrix::identity(k, k),
        seed,
    )
    .unwrap()
}

fn with_beta_w(mut config: DgpConfig, beta_w: DMatrix<f64>) -> DgpConfig {
    config.covariates.beta_w = beta_w;
    config.validate().unwrap();
    config
}

#[test]
fn long_and_short_risk_match_closed_forms() {
    let config = exogenous(25, 2, vec![0.5, -0.5, 0.25, 0.0], 1.5, 11);
    let report = mc_risk_with(
        &config,
        &[EstimatorSpec::ols_long(), EstimatorSpec::ols_short()],
        REPS,
        opts(),
    )
    .unwrap();
    // m sigma2 (1 + k / (n - m - k - 2)) and m sigma2 + m gamma'gamma
    let long = 2.0 * 1.5 * (1.0 + 4.0 / 17.0);
    let short = 2.0 * 1.5 + 2.0 * 0.5625;
    let oracle = RiskOracle::new(&config).unwrap();
    assert!((oracle.ols_long_risk().unwrap() - long).abs() < 1e-12);
    assert!((oracle.ols_short_risk() - short).abs() < 1e-12);
    for (name, want) in [("ols-long", long), ("ols-short", short)] {
        let e = report.estimator(name).unwrap();
        assert!(
            (e.mean_loss - want).abs() <= 3.0 * e.loss_se,
            "{name}: {} +- {} vs {want}",
            e.mean_loss,
            e.loss_se
        );
    }
}

#[test]
fn shrink_beats_long_ols_with_common_random_numbers() {
    let config = exogenous(30, 1, vec![0.2; 8], 1.0, 5);
    let specs = [
        EstimatorSpec::ols_long(),
        EstimatorSpec::shrink(None),
        EstimatorSpec::shrink_positive_part(None),
    ];
    let report = mc_risk_with(&config, &specs, REPS, opts()).unwrap();
    for arm in ["shrink", "shrink-pp"] {
        let d = report.pair(arm, "ols-long").unwrap();
        assert!(
            d.loss_diff_mean < 0.0 && d.loss_diff_mean.abs() >= 5.0 * d.loss_diff_se,
            "{arm}: {d:?}"
        );
    }
    for e in &report.estimators {
        assert!(
            e.bias[0].abs() <= 4.0 * e.bias_se[0] + 1e-10,
            "{}: {:?}",
            e.estimator,
            e.bias
        );
    }
}

#[test]
fn shrink_has_smaller_variance_than_long_ols() {
    let config = exogenous(30, 1, vec![0.1; 8], 1.0, 6);
    let samples = mc_samples(
        &config,
        &[EstimatorSpec::ols_long(), EstimatorSpec::shrink(None)],
        REPS,
        opts(),
    )
    .unwrap();
    let outcome = gauss_markov_check(&samples, "shrink", "ols-long", 5.0);
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn noiseless_zero_gamma_has_zero_losses() {
    let config = exogenous(10, 1, vec![0.0; 3], 0.0, 9);
    let specs = [
        EstimatorSpec::ols_long(),
        EstimatorSpec::ols_short(),
        EstimatorSpec::shrink(Some(0.1)),
        EstimatorSpec::empirical_bayes(),
    ];
    let report = mc_risk_with(&config, &specs, 2, opts()).unwrap();
    for e in &report.estimators {
        assert!(e.mean_loss <= 1e-20, "{}: {}", e.estimator, e.mean_loss);
    }
}

#[test]
fn short_regression_bias_is_beta_w_gamma() {
    let config = with_beta_w(
        exogenous(40, 1, vec![2.0, 3.0], 1.0, 12),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    );
    let check =
        conditional_bias_check_with(&config, &EstimatorSpec::ols_short(), REPS, opts()).unwrap();
    assert!(check.passed, "{}", check.outcome().line());
    assert_eq!(check.expected[0].mean, 2.0);
    assert!((check.bias[0].mean - 2.0).abs() < 0.05);
}

#[test]
fn zero_gamma_or_exogenous_controls_give_zero_bias() {
    let config = with_beta_w(
        exogenous(40, 1, vec![0.0; 4], 1.0, 13),
        DMatrix::from_row_slice(1, 4, &[1.0, -0.5, 0.0, 2.0]),
    );
    let check =
        conditional_bias_check_with(&config, &EstimatorSpec::ols_short(), REPS, opts()).unwrap();
    assert!(
        check.passed && check.expected[0].mean == 0.0,
        "{}",
        check.outcome().line()
    );

    let config = exogenous(40, 2, vec![1.0, 0.5, -0.5, 0.0], 1.0, 14);
    for spec in [
        EstimatorSpec::ols_short(),
        EstimatorSpec::shrink(None),
        EstimatorSpec::empirical_bayes(),
        EstimatorSpec::generalized_bayes(1.0, 0.3, DMatrix::identity(4, 4)),
    ] {
        let check = conditional_bias_check_with(&config, &spec, REPS, opts()).unwrap();
        assert!(check.passed, "{}", check.outcome().line());
    }
}

#[test]
fn shrinkage_bias_follows_the_first_stage_mean() {
    // with beta_w != 0 the shrink rule is biased by -beta_w (E[gamma_hat] - gamma)
    let config = with_beta_w(
        exogenous(20, 1, vec![0.6, 0.6, 0.6, 0.6], 1.0, 15),
        DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 0.0, -0.5]),
    );
    let check =
        conditional_bias_check_with(&config, &EstimatorSpec::shrink(None), REPS, opts()).unwrap();
    assert!(check.passed, "{}", check.outcome().line());
    assert!(
        check.expected[0].mean.abs() > 10.0 * check.expected[0].se,
        "bias should be visible: {:?}",
        check.expected
    );
}

#[test]
fn regression_risk_equals_auxiliary_prediction_risk() {
    let config = exogenous(20, 2, vec![0.5, 0.0, -1.0], 1.0, 16);
    for spec in [
        EstimatorSpec::ols_long(),
        EstimatorSpec::ols_short(),
        EstimatorSpec::shrink(None),
        EstimatorSpec::shrink_positive_part(Some(0.5)),
    ] {
        let check = prediction_equivalence_check_with(&config, &spec, REPS, opts()).unwrap();
        assert!(check.passed, "{}", check.outcome().line());
        if let Some(c) = check.closed_form {
            assert!(
                check.prediction_risk.within(c, 4.0),
                "{}",
                check.outcome().line()
            );
        }
    }
    let noiseless = exogenous(12, 1, vec![0.0; 3], 0.0, 17);
    let check =
        prediction_equivalence_check_with(&noiseless, &EstimatorSpec::ols_long(), 100, opts())
            .unwrap();
    assert!(
        check.passed && check.regression_risk.mean <= 1e-20 && check.prediction_risk.mean == 0.0
    );
    let endogenous = with_beta_w(
        exogenous(12, 1, vec![1.0; 3], 1.0, 17),
        DMatrix::from_element(1, 3, 1.0),
    );
    assert!(prediction_equivalence_check_with(
        &endogenous,
        &EstimatorSpec::ols_long(),
        100,
        opts()
    )
    .is_err());
}

#[test]
fn conditional_loss_decomposes() {
    let config = exogenous(15, 1, vec![0.3, 0.3, 0.3, 0.3, 0.3], 1.0, 18);
    let w = Dgp::new(config.clone()).unwrap().fixed_controls();
    for spec in [
        EstimatorSpec::ols_long(),
        EstimatorSpec::ols_short(),
        EstimatorSpec::shrink(None),
        EstimatorSpec::empirical_bayes(),
    ] {
        let check = loss_decomposition_check_with(&config, &w, &spec, REPS, opts()).unwrap();
        assert!(check.passed, "{}", check.outcome().line());
    }
    let noiseless = exogenous(15, 1, vec![0.0; 5], 0.0, 19);
    let w = Dgp::new(noiseless.clone()).unwrap().fixed_controls();
    let check =
        loss_decomposition_check_with(&noiseless, &w, &EstimatorSpec::ols_long(), 10, opts())
            .unwrap();
    assert!(
        check.passed && check.lhs.mean <= 1e-20 && check.rhs.mean <= 1e-20,
        "{}",
        check.outcome().line()
    );
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let config = exogenous(20, 2, vec![0.5, 0.0, -1.0, 2.0], 1.0, 20);
    let specs = [
        EstimatorSpec::ols_long(),
        EstimatorSpec::shrink(None),
        EstimatorSpec::ols_short(),
    ];
    let one = mc_risk_with(&config, &specs, 3000, McOptions::with_threads(1)).unwrap();
    let four = mc_risk_with(&config, &specs, 3000, McOptions::with_threads(4)).unwrap();
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&four).unwrap()
    );
}

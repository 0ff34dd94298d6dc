//! Algebraic identities, each returning a relative error.

use nalgebra::{DMatrix, DVector};
use shrinkreg::canon::{
    build_basis, canonical_loss, transform, CanonicalSample, GroupAction, GroupElement, Theta,
};
use shrinkreg::estimators::{self, EstimatorKind, EstimatorSpec};
use shrinkreg::linalg::design_matrix;
use shrinkreg::model::RegressionData;
use shrinkreg::rng::{substream, Domain};

use super::{normal_matrix, normal_vector};

pub fn rel_err(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    (got - want).amax() / want.amax().max(f64::MIN_POSITIVE)
}

fn rel_err_scalar(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

/// Residual maker of `[1 | x]`, assembled densely.
fn residual_maker(x: &DMatrix<f64>) -> DMatrix<f64> {
    let a = design_matrix(x, None);
    let n = a.nrows();
    let gram = (a.transpose() * &a).try_inverse().expect("full rank");
    DMatrix::identity(n, n) - &a * gram * a.transpose()
}

/// `||Y||^2_M - ||gamma_ols||^2_{W'MW} = SSR`.
pub fn ssr_identity(data: &RegressionData) -> f64 {
    let fit = estimators::ols_long(data).unwrap();
    let mk = residual_maker(&data.x);
    let y_norm = (&mk * &data.y).norm_squared();
    let seminorm = estimators::seminorm_gamma(data, &fit.gamma_hat).unwrap();
    rel_err_scalar(y_norm - seminorm, fit.ssr)
}

/// `beta_hat = c beta_long + (1 - c) beta_short` for the computed factor `c`.
pub fn interpolation_identity(data: &RegressionData, p: f64, positive_part: bool) -> f64 {
    let shrunk = estimators::shrink_gamma(data, p, positive_part).unwrap();
    let long = estimators::ols_long(data).unwrap();
    let short = estimators::ols_short(data).unwrap();
    let c = shrunk.shrink_factor;
    rel_err(
        &shrunk.beta_hat,
        &(&long.beta_hat * c + &short.beta_hat * (1.0 - c)),
    )
}

/// Empirical-Bayes estimate versus shrink at `p = (k - 2) / (s - k)`:
/// the larger of the factor and coefficient discrepancies.
pub fn eb_identity(data: &RegressionData) -> f64 {
    let (n, m, k) = (data.n(), data.m(), data.k());
    let p = (k as f64 - 2.0) / ((n - m - 1 - k) as f64);
    let eb = estimators::empirical_bayes(data).unwrap();
    let shrink = estimators::shrink_gamma(data, p, false).unwrap();
    rel_err(&eb.beta_hat, &shrink.beta_hat)
        .max(rel_err(&eb.gamma_hat, &shrink.gamma_hat))
        .max(rel_err_scalar(eb.shrink_factor, shrink.shrink_factor))
}

/// `x' qx qx' x = X' h X` with `h = I - 11'/n`.
pub fn prediction_seminorm_identity(x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let basis = build_basis(x, w).unwrap();
    let qxx = basis.qx().tr_mul(x);
    let n = x.nrows();
    let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let want = x.transpose() * h * x;
    (qxx.tr_mul(&qxx) - &want).amax() / want.amax()
}

/// The two-step estimate with `mu_w_hat = Y*_w` is long OLS.
pub fn two_step_identity(data: &RegressionData) -> f64 {
    let basis = build_basis(&data.x, &data.w).unwrap();
    let form = transform(&data.y, &basis, &data.x, &data.w).unwrap();
    let two_step = form.two_step_beta(&form.y_star_w).unwrap();
    rel_err(&two_step, &estimators::ols_long(data).unwrap().beta_hat)
}

/// The six estimators, with generalized Bayes at a non-isotropic prior.
pub fn all_specs(k: usize, seed: u64) -> Vec<EstimatorSpec> {
    let mut rng = substream(seed, Domain::Auxiliary, 31);
    let a = normal_matrix(&mut rng, k, k);
    let sigma_w = a.transpose() * a + DMatrix::identity(k, k);
    let mut specs = vec![
        EstimatorSpec::ols_long(),
        EstimatorSpec::ols_short(),
        EstimatorSpec::shrink(Some(0.2)),
        EstimatorSpec::shrink_positive_part(Some(0.6)),
        EstimatorSpec::generalized_bayes(1.3, 0.7, sigma_w),
    ];
    if k >= 3 {
        specs.push(EstimatorSpec::empirical_bayes());
    }
    specs
}

/// Rotating the controls, `W -> W R`, leaves `beta_hat` unchanged; the
/// generalized-Bayes prior is rotated along.
pub fn rotation_invariance(
    data: &RegressionData,
    spec: &EstimatorSpec,
    rotation: &DMatrix<f64>,
) -> f64 {
    let base = spec.estimate(data).unwrap().beta_hat;
    let kind = match &spec.kind {
        EstimatorKind::GeneralizedBayes {
            sigma2,
            tau2,
            sigma_w,
        } => EstimatorKind::GeneralizedBayes {
            sigma2: *sigma2,
            tau2: *tau2,
            sigma_w: rotation.transpose() * sigma_w * rotation,
        },
        other => other.clone(),
    };
    let rotated = RegressionData::new(data.y.clone(), data.x.clone(), &data.w * rotation).unwrap();
    rel_err(
        &EstimatorSpec::new(kind)
            .estimate(&rotated)
            .unwrap()
            .beta_hat,
        &base,
    )
}

/// `Y -> Y + c0 + X c` shifts `beta_hat` by `c`.
pub fn translation_equivariance(
    data: &RegressionData,
    spec: &EstimatorSpec,
    c0: f64,
    c: &DVector<f64>,
) -> f64 {
    let base = spec.estimate(data).unwrap().beta_hat;
    let y = &data.y + &data.x * c + DVector::from_element(data.n(), c0);
    let shifted = RegressionData::new(y, data.x.clone(), data.w.clone()).unwrap();
    rel_err(&spec.estimate(&shifted).unwrap().beta_hat, &(base + c))
}

/// `(Y, sigma) -> (lambda Y, lambda sigma)` scales `beta_hat` by `lambda`.
pub fn scale_equivariance(data: &RegressionData, spec: &EstimatorSpec, lambda: f64) -> f64 {
    let base = spec.estimate(data).unwrap().beta_hat;
    let kind = match &spec.kind {
        EstimatorKind::GeneralizedBayes {
            sigma2,
            tau2,
            sigma_w,
        } => EstimatorKind::GeneralizedBayes {
            sigma2: sigma2 * lambda * lambda,
            tau2: tau2 * lambda * lambda,
            sigma_w: sigma_w.clone(),
        },
        other => other.clone(),
    };
    let scaled = RegressionData::new(&data.y * lambda, data.x.clone(), data.w.clone()).unwrap();
    rel_err(
        &EstimatorSpec::new(kind).estimate(&scaled).unwrap().beta_hat,
        &(base * lambda),
    )
}

pub struct GroupInstance {
    pub action: GroupAction,
    pub g: GroupElement,
    pub h: GroupElement,
    pub sample: CanonicalSample,
    pub theta: Theta,
    pub decision: DVector<f64>,
}

pub fn group_instance(seed: u64, m: usize, k: usize, s: usize) -> GroupInstance {
    let mut rng = substream(seed, Domain::Auxiliary, 37);
    let a = normal_matrix(&mut rng, k, k);
    let sigma_w = a.transpose() * a + DMatrix::identity(k, k) * 0.25;
    GroupInstance {
        action: GroupAction::new(&sigma_w).unwrap(),
        g: GroupElement::random(m, k, s, &mut rng),
        h: GroupElement::random(m, k, s, &mut rng),
        sample: CanonicalSample {
            yx: normal_vector(&mut rng, m),
            yperp: normal_vector(&mut rng, s),
            wx: normal_matrix(&mut rng, m, k),
            wperp: normal_matrix(&mut rng, s, k),
        },
        theta: Theta {
            mu_x: normal_vector(&mut rng, m),
            gamma: normal_vector(&mut rng, k),
        },
        decision: normal_vector(&mut rng, m),
    }
}

fn sample_vec(z: &CanonicalSample) -> DVector<f64> {
    let parts: Vec<f64> =
        z.yx.iter()
            .chain(z.yperp.iter())
            .chain(z.wx.iter())
            .chain(z.wperp.iter())
            .copied()
            .collect();
    DVector::from_vec(parts)
}

/// Acting by `h` then `g` equals acting by `g ∘ h`, on samples, parameters
/// and decisions; largest absolute discrepancy.
pub fn homomorphism(inst: &GroupInstance) -> f64 {
    let GroupInstance {
        action,
        g,
        h,
        sample,
        theta,
        decision,
    } = inst;
    let gh = g.compose(h);
    let twice = action
        .on_sample(g, &action.on_sample(h, sample).unwrap())
        .unwrap();
    let once = action.on_sample(&gh, sample).unwrap();
    let sample_err = (sample_vec(&twice) - sample_vec(&once)).amax();
    let tp = action
        .on_params(g, &action.on_params(h, theta).unwrap())
        .unwrap();
    let op = action.on_params(&gh, theta).unwrap();
    let param_err = (tp.mu_x - op.mu_x).amax().max((tp.gamma - op.gamma).amax());
    let ta = action.on_action(g, &action.on_action(h, decision));
    let oa = action.on_action(&gh, decision);
    sample_err.max(param_err).max((ta - oa).amax())
}

/// `L(g theta, g a) = L(theta, a)`, relative.
pub fn loss_invariance(inst: &GroupInstance) -> f64 {
    let GroupInstance {
        action,
        g,
        theta,
        decision,
        ..
    } = inst;
    let before = canonical_loss(theta, decision);
    let after = canonical_loss(
        &action.on_params(g, theta).unwrap(),
        &action.on_action(g, decision),
    );
    (after - before).abs() / before.max(f64::MIN_POSITIVE)
}

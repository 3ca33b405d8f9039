//! Loss functionals and the estimation/approximation split of excess error.
//!
//! Margins are signed scores `m_i = (2 y_i - 1) * Phi(x_i)`. For every sample
//! the 0/1 loss, the ramp loss and the gamma-margin loss satisfy
//! `1{m <= 0} <= ramp(m) <= 1{m <= gamma}` (with the 0/1 loss counting
//! `Phi = 0` as class 1), so the sample means inherit the ordering.

use serde::{Deserialize, Serialize};

use crate::dgp::{Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::models::ChoiceModel;
use crate::numerics::{Estimate, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub gamma: f64,
    pub eval_mc_size: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            eval_mc_size: 100_000,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.eval_mc_size < 1000 {
            return Err(Error::Config(format!(
                "eval_mc_size must be >= 1000, got {}",
                self.eval_mc_size
            )));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("margin parameter must be positive, got {gamma}")));
    }
    Ok(())
}

/// Hard decision of the model: class 1 when `s(x) >= 0.5`, i.e. `Phi(x) >= 0`.
#[inline]
pub fn predicted_class(logit: f64) -> u8 {
    u8::from(logit >= 0.0)
}

/// Misclassification rate of the 0.5-threshold rule, ties to class 1.
pub fn prediction_loss(model: &impl ChoiceModel, data: &Dataset) -> Result<f64> {
    let z = model.logits(&data.x)?;
    let wrong = z.iter().zip(&data.y).filter(|(&z, &y)| predicted_class(z) != y).count();
    Ok(wrong as f64 / data.len() as f64)
}

/// [`prediction_loss`] with its binomial standard error.
pub fn prediction_loss_estimate(model: &impl ChoiceModel, data: &Dataset) -> Result<Estimate> {
    let z = model.logits(&data.x)?;
    Ok(Estimate::from_samples(
        z.iter()
            .zip(&data.y)
            .map(|(&z, &y)| f64::from(u8::from(predicted_class(z) != y))),
    ))
}

/// Mean of `(p_true - s(x))^2` over a dataset that carries its true probabilities.
pub fn interpretation_loss_on(model: &impl ChoiceModel, data: &Dataset) -> Result<Estimate> {
    let p_true = data.p_true.as_ref().ok_or_else(|| {
        Error::Unsupported("interpretation loss needs known true probabilities".into())
    })?;
    let s = model.probs(&data.x)?;
    Ok(Estimate::from_samples(s.iter().zip(p_true).map(|(a, b)| (a - b).powi(2))))
}

/// Population interpretation loss `E[(s*(x) - s(x))^2]` by Monte Carlo over
/// fresh draws from `P_x`. The model sees only observed inputs; `s*` uses all.
pub fn interpretation_loss(
    model: &impl ChoiceModel,
    spec: Option<&DgpSpec>,
    mc_size: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    let spec = spec.ok_or_else(|| {
        Error::Unsupported("interpretation loss is defined only for a known data-generating process".into())
    })?;
    if mc_size == 0 {
        return Err(Error::Size("Monte-Carlo size must be >= 1".into()));
    }
    let x_full = spec.sample_inputs(mc_size, rng)?;
    let s_true = spec.true_probs(&x_full)?;
    let x_obs = observed_matrix(spec, x_full);
    let s_hat = model.probs(&x_obs)?;
    Ok(Estimate::from_samples(s_true.iter().zip(&s_hat).map(|(a, b)| (a - b).powi(2))))
}

fn observed_matrix(spec: &DgpSpec, x_full: Matrix) -> Matrix {
    if spec.dropped.is_empty() {
        x_full
    } else {
        x_full.select_cols(&spec.observed_indices())
    }
}

/// Empirical mean squared error `(1/N) sum (y_i - s(x_i))^2`.
pub fn mse_loss(model: &impl ChoiceModel, data: &Dataset) -> Result<f64> {
    Ok(mse_estimate(model, data)?.value)
}

pub fn mse_estimate(model: &impl ChoiceModel, data: &Dataset) -> Result<Estimate> {
    let s = model.probs(&data.x)?;
    Ok(Estimate::from_samples(
        s.iter().zip(&data.y).map(|(p, &y)| (f64::from(y) - p).powi(2)),
    ))
}

/// Signed scores `(2 y_i - 1) * Phi(x_i)`.
pub fn margins(model: &impl ChoiceModel, data: &Dataset) -> Result<Vec<f64>> {
    let z = model.logits(&data.x)?;
    Ok(z.iter()
        .zip(&data.y)
        .map(|(&z, &y)| if y == 1 { z } else { -z })
        .collect())
}

/// Ramp function: 1 for `m <= 0`, `1 - m / gamma` on `(0, gamma)`, 0 from `gamma` on.
#[inline]
pub fn ramp(m: f64, gamma: f64) -> f64 {
    if m <= 0.0 {
        1.0
    } else if m < gamma {
        1.0 - m / gamma
    } else {
        0.0
    }
}

pub fn ramp_loss(model: &impl ChoiceModel, data: &Dataset, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let m = margins(model, data)?;
    Ok(m.iter().map(|&v| ramp(v, gamma)).sum::<f64>() / m.len() as f64)
}

/// Fraction of samples with margin at most `gamma`.
pub fn margin_loss(model: &impl ChoiceModel, data: &Dataset, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let m = margins(model, data)?;
    Ok(m.iter().filter(|&&v| v <= gamma).count() as f64 / m.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub test_loss: f64,
    /// Estimate of the best loss attainable in the model class.
    pub reference_class_loss: f64,
    pub bayes_loss: f64,
    pub estimation_error: f64,
    pub approximation_error: f64,
}

/// Splits `test - bayes` into `test - reference` and `reference - bayes`.
/// No clamping: Monte-Carlo noise can make either part slightly negative.
pub fn decompose_error(test_loss: f64, reference_class_loss: f64, bayes_loss: f64) -> ErrorDecomposition {
    ErrorDecomposition {
        test_loss,
        reference_class_loss,
        bayes_loss,
        estimation_error: test_loss - reference_class_loss,
        approximation_error: reference_class_loss - bayes_loss,
    }
}

/// Every loss for one fitted model: prediction, interpretation and MSE on the
/// held-out evaluation sample; log-loss, ramp and margin losses on the
/// training sample (the margin loss feeds the prediction bound).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub train_log_loss: f64,
    pub eval_log_loss: f64,
    pub train_prediction_loss: f64,
    pub prediction_loss: Estimate,
    pub interpretation_loss: Option<Estimate>,
    pub mse: Estimate,
    pub gamma: f64,
    pub ramp_loss: f64,
    pub margin_loss: f64,
}

pub fn evaluate(
    model: &impl ChoiceModel,
    train: &Dataset,
    eval: &Dataset,
    config: &MetricConfig,
) -> Result<MetricsReport> {
    config.validate()?;
    let interpretation_loss = match eval.p_true {
        Some(_) => Some(interpretation_loss_on(model, eval)?),
        None => None,
    };
    Ok(MetricsReport {
        train_log_loss: crate::training::dataset_log_loss(model, train)?,
        eval_log_loss: crate::training::dataset_log_loss(model, eval)?,
        train_prediction_loss: prediction_loss(model, train)?,
        prediction_loss: prediction_loss_estimate(model, eval)?,
        interpretation_loss,
        mse: mse_estimate(model, eval)?,
        gamma: config.gamma,
        ramp_loss: ramp_loss(model, train, config.gamma)?,
        margin_loss: margin_loss(model, train, config.gamma)?,
    })
}

//! Loss kernels for heteroscedastic pair regression.
//!
//! Three components combine into the training objective:
//!
//! - `beta_nll`: Gaussian negative log-likelihood with each term reweighted
//!   by a detached `sigma^(2*beta)` factor, so high-variance points are
//!   down-weighted without the weight itself becoming an optimization target.
//! - `variance_penalty`: L2 norm over the batch of `exp(-alpha*err^2) * sigma2`,
//!   which punishes high variance exactly where the error is low.
//! - `alignment_loss`: mean squared gap between segment cosine similarity and
//!   the gold score rescaled to [-1, 1].
//!
//! Each kernel has a paired `*_grad` returning analytic derivatives w.r.t.
//! the model outputs; the gradients are what the trainer backpropagates
//! through the ensembled forward passes.

use crate::error::{Error, LossComponent};
use crate::Result;

/// Weights and numerical constants of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// Variance reweighting exponent, in [0, 1]. 0 recovers plain Gaussian NLL.
    pub beta: f64,
    /// Sharpness of the error weighting in the variance penalty, > 0.
    pub alpha: f64,
    /// Weight of the variance penalty, >= 0.
    pub lambda1: f64,
    /// Weight of the alignment loss, >= 0.
    pub lambda2: f64,
    /// Floor added to softplus output so predicted variance stays positive.
    pub var_floor: f64,
    /// Smoothing constant inside the penalty's L2 norm, removing the
    /// gradient singularity at the all-zero vector.
    pub norm_eps: f64,
    /// Divide the NLL sum by the batch size (off by default; the sum
    /// reduction is the reference behavior).
    pub mean_reduce_nll: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.5,
            alpha: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            var_floor: 1e-8,
            norm_eps: 1e-12,
            mean_reduce_nll: false,
        }
    }
}

impl LossWeights {
    /// Check the invariants: `alpha > 0`, `lambda1, lambda2 >= 0`,
    /// `var_floor > 0`, `beta` in [0, 1].
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::invalid(format!(
                "lambda1 and lambda2 must be >= 0, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.var_floor > 0.0) {
            return Err(Error::invalid(format!(
                "var_floor must be > 0, got {}",
                self.var_floor
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must be in [0,1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Gold scores of one batch together with their [-1, 1] rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    pub y: Vec<f64>,
    pub y_prime: Vec<f64>,
    pub label_min: f64,
    pub label_max: f64,
}

impl BatchTargets {
    pub fn new(y: Vec<f64>, label_min: f64, label_max: f64) -> Result<Self> {
        let y_prime = rescale_labels(&y, label_min, label_max)?;
        Ok(BatchTargets { y, y_prime, label_min, label_max })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Affine map of scores from [label_min, label_max] onto [-1, 1].
pub fn rescale_labels(y: &[f64], label_min: f64, label_max: f64) -> Result<Vec<f64>> {
    if !(label_max > label_min) {
        return Err(Error::invalid(format!(
            "degenerate label bounds [{label_min}, {label_max}]"
        )));
    }
    let span = label_max - label_min;
    y.iter()
        .map(|&v| {
            if v < label_min || v > label_max {
                Err(Error::invalid(format!(
                    "score {v} outside label bounds [{label_min}, {label_max}]"
                )))
            } else {
                Ok(2.0 * (v - label_min) / span - 1.0)
            }
        })
        .collect()
}

fn check_lengths(y: &[f64], y_hat: &[f64], sigma2: Option<&[f64]>) -> Result<()> {
    if y.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if y.len() != y_hat.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if let Some(s) = sigma2 {
        if s.len() != y.len() {
            return Err(Error::invalid(format!(
                "length mismatch: {} targets vs {} variances",
                y.len(),
                s.len()
            )));
        }
    }
    Ok(())
}

/// Beta-weighted Gaussian NLL, sum reduction:
/// `0.5 * sum_i sigma_i^(2*beta) * (log sigma_i^2 + (y_i - y_hat_i)^2 / sigma_i^2)`.
///
/// The `sigma^(2*beta)` factor acts as a constant per-sample weight; no
/// gradient flows through it (see `beta_nll_grad`).
pub fn beta_nll(y: &[f64], y_hat: &[f64], sigma2: &[f64], beta: f64, mean_reduce: bool) -> Result<f64> {
    check_lengths(y, y_hat, Some(sigma2))?;
    let mut total = 0.0;
    for i in 0..y.len() {
        let s2 = sigma2[i];
        if !(s2 > 0.0) {
            return Err(Error::invalid(format!(
                "sigma2[{i}] = {s2} must be strictly positive"
            )));
        }
        let e = y[i] - y_hat[i];
        let w = s2.powf(beta);
        total += 0.5 * w * (s2.ln() + e * e / s2);
    }
    if mean_reduce {
        total /= y.len() as f64;
    }
    Ok(total)
}

/// Analytic gradients of [`beta_nll`] w.r.t. predictions and variances.
///
/// With the weight `w_i = sigma_i^(2*beta)` detached:
/// `dL/dy_hat_i = -w_i * e_i / sigma_i^2`,
/// `dL/dsigma2_i = 0.5 * w_i * (1/sigma_i^2 - e_i^2 / sigma_i^4)`.
pub fn beta_nll_grad(
    y: &[f64],
    y_hat: &[f64],
    sigma2: &[f64],
    beta: f64,
    mean_reduce: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(y, y_hat, Some(sigma2))?;
    let n = y.len();
    let scale = if mean_reduce { 1.0 / n as f64 } else { 1.0 };
    let mut d_yhat = vec![0.0; n];
    let mut d_sigma2 = vec![0.0; n];
    for i in 0..n {
        let s2 = sigma2[i];
        if !(s2 > 0.0) {
            return Err(Error::invalid(format!(
                "sigma2[{i}] = {s2} must be strictly positive"
            )));
        }
        let e = y[i] - y_hat[i];
        let w = s2.powf(beta);
        d_yhat[i] = scale * (-w * e / s2);
        d_sigma2[i] = scale * 0.5 * w * (1.0 / s2 - e * e / (s2 * s2));
    }
    Ok((d_yhat, d_sigma2))
}

/// Error-weighted variance penalty:
/// `(1/N) * sqrt(sum_i (exp(-alpha * e_i^2) * sigma2_i)^2 + norm_eps)`.
///
/// The weight is ~1 where the error is small and decays to 0 for large
/// errors, so only low-error points pay for high predicted variance.
pub fn variance_penalty(
    y: &[f64],
    y_hat: &[f64],
    sigma2: &[f64],
    alpha: f64,
    norm_eps: f64,
) -> Result<f64> {
    check_lengths(y, y_hat, Some(sigma2))?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    let n = y.len() as f64;
    let mut sum_sq = 0.0;
    for i in 0..y.len() {
        let e = y[i] - y_hat[i];
        let g = (-alpha * e * e).exp() * sigma2[i];
        sum_sq += g * g;
    }
    Ok((sum_sq + norm_eps).sqrt() / n)
}

/// Analytic gradients of [`variance_penalty`].
///
/// With `g_i = exp(-alpha*e_i^2) * sigma2_i` and `R = sqrt(sum g^2 + eps)`:
/// `dL/dsigma2_i = g_i * exp(-alpha*e_i^2) / (N*R)`,
/// `dL/dy_hat_i  = 2*alpha*e_i*g_i^2 / (N*R)`.
pub fn variance_penalty_grad(
    y: &[f64],
    y_hat: &[f64],
    sigma2: &[f64],
    alpha: f64,
    norm_eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(y, y_hat, Some(sigma2))?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    let n = y.len();
    let nf = n as f64;
    let mut weights = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut sum_sq = 0.0;
    for i in 0..n {
        let e = y[i] - y_hat[i];
        weights[i] = (-alpha * e * e).exp();
        g[i] = weights[i] * sigma2[i];
        sum_sq += g[i] * g[i];
    }
    let r = (sum_sq + norm_eps).sqrt();
    let mut d_yhat = vec![0.0; n];
    let mut d_sigma2 = vec![0.0; n];
    for i in 0..n {
        let e = y[i] - y_hat[i];
        d_sigma2[i] = g[i] * weights[i] / (nf * r);
        d_yhat[i] = 2.0 * alpha * e * g[i] * g[i] / (nf * r);
    }
    Ok((d_yhat, d_sigma2))
}

/// Mean squared gap between segment similarities and rescaled labels:
/// `(1/N) * sum_i (s_i - y'_i)^2`. Range [0, 4] for inputs in [-1, 1].
pub fn alignment_loss(s: &[f64], y_prime: &[f64]) -> Result<f64> {
    check_lengths(s, y_prime, None)?;
    let n = s.len() as f64;
    Ok(s.iter()
        .zip(y_prime)
        .map(|(si, yi)| (si - yi) * (si - yi))
        .sum::<f64>()
        / n)
}

/// Gradient of [`alignment_loss`] w.r.t. the similarities:
/// `dL/ds_i = 2*(s_i - y'_i)/N`.
pub fn alignment_loss_grad(s: &[f64], y_prime: &[f64]) -> Result<Vec<f64>> {
    check_lengths(s, y_prime, None)?;
    let n = s.len() as f64;
    Ok(s.iter().zip(y_prime).map(|(si, yi)| 2.0 * (si - yi) / n).collect())
}

/// The three scalar parts of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub pen: f64,
    pub align: f64,
}

impl LossParts {
    fn check_finite(&self) -> Result<()> {
        for (component, value) in [
            (LossComponent::Nll, self.nll),
            (LossComponent::Penalty, self.pen),
            (LossComponent::Alignment, self.align),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { component, value });
            }
        }
        Ok(())
    }
}

/// Weighted combination `nll + lambda1*pen + lambda2*align`; exactly linear
/// in each part. Non-finite parts are rejected naming the offender.
pub fn total_loss(parts: LossParts, weights: &LossWeights) -> Result<f64> {
    parts.check_finite()?;
    Ok(parts.nll + weights.lambda1 * parts.pen + weights.lambda2 * parts.align)
}

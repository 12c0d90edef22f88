//! Differentiable bit-rate estimates.
//!
//! The coding cost of a symbol ŷ under N(μ, σ²) with bin width q is
//! −log₂(Φ((ŷ−μ+q/2)/σ) − Φ((ŷ−μ−q/2)/σ)), with each interval probability
//! clamped below at 2⁻¹⁶. Evaluation uses |ŷ−μ| and the complementary
//! form so both CDF arguments stay on the stable negative side.

use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor};

use super::{GaussianParams, PriorParams, MIN_LIKELIHOOD};

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Per-element bits map for latents under (μ, σ) with half-width `q_half`
/// given as a full tensor of the latent's shape.
fn bits_map<T: Scalar>(
    g: &Graph<T>,
    value: &Tensor<T>,
    mu: &Tensor<T>,
    sigma: &Tensor<T>,
    q_half: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = g.abs(&g.sub(value, mu)?);
    let upper = g.gauss_cdf(&g.div(&g.sub(q_half, &d)?, sigma)?);
    let lower = g.gauss_cdf(&g.div(&g.neg(&g.add(q_half, &d)?), sigma)?);
    let p = g.sub(&upper, &lower)?;
    let p = g.clamp_min(&p, T::from_f64(MIN_LIKELIHOOD));
    let p = g.clamp_max(&p, T::ONE);
    Ok(g.mul_scalar(&g.ln(&p), T::from_f64(-LOG2_E)))
}

/// Per-element bits of ŷ under a Gaussian field with per-channel step.
pub fn rate_map<T: Scalar>(
    g: &Graph<T>,
    y_hat: &Tensor<T>,
    params: &GaussianParams<T>,
    q_step: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = y_hat.dims4()?;
    let q_half = g.broadcast_channel(&g.mul_scalar(q_step, T::from_f64(0.5)), [n, c, h, w])?;
    bits_map(g, y_hat, &params.mu, &params.sigma, &q_half)
}

/// Total estimated bits of ŷ (see [`rate_map`]).
pub fn rate_estimate<T: Scalar>(
    g: &Graph<T>,
    y_hat: &Tensor<T>,
    params: &GaussianParams<T>,
    q_step: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(g.sum_all(&rate_map(g, y_hat, params, q_step)?))
}

/// Per-element bits of ẑ under the per-channel factorized prior (q = 1).
pub fn factorized_rate_map<T: Scalar>(
    g: &Graph<T>,
    z_hat: &Tensor<T>,
    prior: &PriorParams<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = z_hat.dims4()?;
    let mu = g.broadcast_channel(&prior.mu, [n, c, h, w])?;
    let sigma = g.broadcast_channel(&prior.sigma(g), [n, c, h, w])?;
    let q_half = Tensor::full(vec![n, c, h, w], T::from_f64(0.5));
    bits_map(g, z_hat, &mu, &sigma, &q_half)
}

/// Total estimated bits of ẑ.
pub fn factorized_rate<T: Scalar>(
    g: &Graph<T>,
    z_hat: &Tensor<T>,
    prior: &PriorParams<T>,
) -> Result<Tensor<T>> {
    Ok(g.sum_all(&factorized_rate_map(g, z_hat, prior)?))
}

//! Entropy modeling: quantization with learnable steps, the hyperprior,
//! the two-pass checkerboard spatial context, and differentiable rate
//! estimates for the Gaussian conditional p(ŷ|ẑ) ~ N(μ, σ²).

mod checkerboard;
mod model;
mod quant;
mod rate;

pub use checkerboard::{anchor_count, checkerboard_mask};
pub use model::{hyper_decode, hyper_encode, spatial_context, ContextParams, HyperParams, PriorParams};
pub use quant::{effective_step, quantize, QuantMode};
pub use rate::{factorized_rate, factorized_rate_map, rate_estimate, rate_map};

use crate::tensor::{Scalar, Tensor};

/// Smallest admissible Gaussian scale.
pub const SIGMA_MIN: f64 = 1e-4;

/// Interval probabilities are clamped below at 2⁻¹⁶ in rate estimates.
pub const MIN_LIKELIHOOD: f64 = 1.0 / 65536.0;

/// Mean/scale field of a Gaussian conditional, same shape as the latent.
#[derive(Clone, Debug)]
pub struct GaussianParams<T: Scalar> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

/// Latents and side information produced by one analysis pass.
pub struct LatentPair<T: Scalar> {
    pub y: Tensor<T>,
    pub y_hat: Tensor<T>,
    pub z: Tensor<T>,
    pub z_hat: Tensor<T>,
    /// 1.0 at anchor positions of the checkerboard, 0.0 elsewhere.
    pub anchor_mask: Tensor<T>,
    pub params_anchor: GaussianParams<T>,
    pub params_nonanchor: GaussianParams<T>,
    /// Effective per-channel quantization step used for ŷ.
    pub q_step: Tensor<T>,
}

//! Hyperprior and dual-spatial-prior parameter networks.
//!
//! `hyper_encode` summarizes y into a hyper-latent z over two stride-2
//! stages; `hyper_decode` mirrors them and emits the base Gaussian field
//! (μ₀, σ₀) for every ŷ position. `spatial_context` refines the field at
//! non-anchor positions from already-decoded anchors.

use crate::error::{CodecError, Result};
use crate::nn::init::Init;
use crate::nn::layers::Conv2dLayer;
use crate::nn::params::{join, ParamGroup};
use crate::tensor::{Graph, Scalar, Tensor};

use super::{GaussianParams, SIGMA_MIN};

#[derive(Clone)]
pub struct HyperParams<T: Scalar> {
    pub a1: Conv2dLayer<T>,
    pub a2: Conv2dLayer<T>,
    pub s1: Conv2dLayer<T>,
    pub s2: Conv2dLayer<T>,
}

impl<T: Scalar> HyperParams<T> {
    pub fn new(init: &mut Init, latent_c: usize, hyper_c: usize) -> Self {
        HyperParams {
            a1: Conv2dLayer::new(init, latent_c, hyper_c, 3, 2, 1),
            a2: Conv2dLayer::new(init, hyper_c, hyper_c, 3, 2, 1),
            s1: Conv2dLayer::new(init, hyper_c, 4 * hyper_c, 3, 1, 1),
            s2: Conv2dLayer::new(init, hyper_c, 4 * 2 * latent_c, 3, 1, 1),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for HyperParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        HyperParams {
            a1: self.a1.map_named(&join(prefix, "a1"), f),
            a2: self.a2.map_named(&join(prefix, "a2"), f),
            s1: self.s1.map_named(&join(prefix, "s1"), f),
            s2: self.s2.map_named(&join(prefix, "s2"), f),
        }
    }
}

fn relu<T: Scalar>(g: &Graph<T>, x: &Tensor<T>) -> Tensor<T> {
    g.clamp_min(x, T::ZERO)
}

/// y → z over two stride-2 convolution stages.
pub fn hyper_encode<T: Scalar>(g: &Graph<T>, y: &Tensor<T>, p: &HyperParams<T>) -> Result<Tensor<T>> {
    let h = relu(g, &p.a1.forward(g, y)?);
    p.a2.forward(g, &h)
}

/// ẑ → (μ₀, σ₀) at every ŷ position.
///
/// The two pixel-shuffle upsamplings can overshoot when the y extents are
/// not multiples of 4; the field is cropped back to (y_h, y_w), which the
/// decoder derives from the container header, so both sides stay in sync.
pub fn hyper_decode<T: Scalar>(
    g: &Graph<T>,
    z_hat: &Tensor<T>,
    p: &HyperParams<T>,
    y_h: usize,
    y_w: usize,
) -> Result<GaussianParams<T>> {
    let u = relu(g, &g.pixel_shuffle(&p.s1.forward(g, z_hat)?, 2)?);
    let u = g.pixel_shuffle(&p.s2.forward(g, &u)?, 2)?;
    let (_, c2, uh, uw) = u.dims4()?;
    if uh < y_h || uw < y_w {
        return Err(CodecError::shape(
            "hyper_decode",
            format!("upsampled field at least {y_h}x{y_w}"),
            format!("{uh}x{uw}"),
        ));
    }
    let u = g.crop_hw(&u, y_h, y_w)?;
    let latent_c = c2 / 2;
    let mu = g.slice_c(&u, 0, latent_c)?;
    let sigma_raw = g.slice_c(&u, latent_c, latent_c)?;
    let sigma = g.clamp_min(&g.softplus(&sigma_raw), T::from_f64(SIGMA_MIN));
    Ok(GaussianParams { mu, sigma })
}

#[derive(Clone)]
pub struct ContextParams<T: Scalar> {
    pub c1: Conv2dLayer<T>,
    pub c2: Conv2dLayer<T>,
}

impl<T: Scalar> ContextParams<T> {
    pub fn new(init: &mut Init, latent_c: usize) -> Self {
        ContextParams {
            c1: Conv2dLayer::new(init, 3 * latent_c, 2 * latent_c, 3, 1, 1),
            c2: Conv2dLayer::new(init, 2 * latent_c, 2 * latent_c, 3, 1, 1),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for ContextParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        ContextParams {
            c1: self.c1.map_named(&join(prefix, "c1"), f),
            c2: self.c2.map_named(&join(prefix, "c2"), f),
        }
    }
}

/// Refine (μ₀, σ₀) into (μ₁, σ₁) using decoded anchors.
///
/// The context net sees (ŷ ⊙ anchor_mask) ⊕ μ₀ ⊕ σ₀ and produces residual
/// corrections, so zeroed context weights reduce (μ₁, σ₁) to (μ₀, σ₀).
/// The returned field is only meaningful (and only used) at non-anchor
/// positions.
pub fn spatial_context<T: Scalar>(
    g: &Graph<T>,
    y_hat: &Tensor<T>,
    anchor_mask: &Tensor<T>,
    base: &GaussianParams<T>,
    p: &ContextParams<T>,
) -> Result<GaussianParams<T>> {
    if anchor_mask.shape() != y_hat.shape() {
        return Err(CodecError::shape(
            "spatial_context mask",
            format!("{:?}", y_hat.shape()),
            format!("{:?}", anchor_mask.shape()),
        ));
    }
    let masked = g.mul(y_hat, anchor_mask)?;
    let input = g.concat_c(&[&masked, &base.mu, &base.sigma])?;
    let hidden = relu(g, &p.c1.forward(g, &input)?);
    let delta = p.c2.forward(g, &hidden)?;
    let c = y_hat.shape()[1];
    let d_mu = g.slice_c(&delta, 0, c)?;
    let d_sigma = g.slice_c(&delta, c, c)?;
    let mu = g.add(&base.mu, &d_mu)?;
    let sigma = g.clamp_min(&g.add(&base.sigma, &d_sigma)?, T::from_f64(SIGMA_MIN));
    Ok(GaussianParams { mu, sigma })
}

/// Per-channel factorized Gaussian prior for the hyper-latent ẑ.
#[derive(Clone)]
pub struct PriorParams<T: Scalar> {
    pub mu: Tensor<T>,
    pub sigma_raw: Tensor<T>,
}

impl<T: Scalar> PriorParams<T> {
    pub fn new(hyper_c: usize) -> Self {
        PriorParams {
            mu: Tensor::zeros(vec![hyper_c]),
            sigma_raw: Tensor::full(vec![hyper_c], T::from_f64(crate::fmath::softplus_inv(1.0))),
        }
    }

    /// Positive per-channel scales.
    pub fn sigma(&self, g: &Graph<T>) -> Tensor<T> {
        g.clamp_min(&g.softplus(&self.sigma_raw), T::from_f64(SIGMA_MIN))
    }
}

impl<T: Scalar> ParamGroup<T> for PriorParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        PriorParams {
            mu: f(&join(prefix, "mu"), &self.mu),
            sigma_raw: f(&join(prefix, "sigma_raw"), &self.sigma_raw),
        }
    }
}

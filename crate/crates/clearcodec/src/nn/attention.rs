//! Channel-wise group attention, spatially decoupled attention, the gated
//! feed-forward network, and the hybrid-attention transformer block that
//! composes them.

use super::init::Init;
use super::layers::{map_vec, Conv2dLayer, LayerNormLayer};
use super::params::{join, ParamGroup};
use super::AttentionConfig;
use crate::error::{CodecError, Result};
use crate::tensor::{Graph, Scalar, Tensor};

/// 1×1 projection followed by a 3×3 depthwise convolution.
#[derive(Clone)]
pub struct Projection<T: Scalar> {
    pub point: Conv2dLayer<T>,
    pub depth: Conv2dLayer<T>,
}

impl<T: Scalar> Projection<T> {
    fn new(init: &mut Init, c: usize) -> Self {
        Projection {
            point: Conv2dLayer::pointwise(init, c, c),
            depth: Conv2dLayer::grouped(init, c, c, 3, 3, 1, 1, c),
        }
    }

    fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.depth.forward(g, &self.point.forward(g, x)?)
    }
}

impl<T: Scalar> ParamGroup<T> for Projection<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        Projection {
            point: self.point.map_named(&join(prefix, "point"), f),
            depth: self.depth.map_named(&join(prefix, "depth"), f),
        }
    }
}

#[derive(Clone)]
pub struct CgaParams<T: Scalar> {
    pub q_proj: Projection<T>,
    pub k_proj: Projection<T>,
    pub v_proj: Projection<T>,
    pub out_proj: Conv2dLayer<T>,
}

impl<T: Scalar> CgaParams<T> {
    pub fn new(init: &mut Init, c: usize) -> Self {
        CgaParams {
            q_proj: Projection::new(init, c),
            k_proj: Projection::new(init, c),
            v_proj: Projection::new(init, c),
            out_proj: Conv2dLayer::pointwise(init, c, c),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for CgaParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        CgaParams {
            q_proj: self.q_proj.map_named(&join(prefix, "q"), f),
            k_proj: self.k_proj.map_named(&join(prefix, "k"), f),
            v_proj: self.v_proj.map_named(&join(prefix, "v"), f),
            out_proj: self.out_proj.map_named(&join(prefix, "out"), f),
        }
    }
}

/// Channel-wise group attention: per group of C_g channels, attention is
/// computed between channel tokens, so the score matrix is C_g×C_g and the
/// cost stays linear in H·W.
pub fn cga_forward<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    p: &CgaParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if c % cfg.n_groups != 0 || c != cfg.width() {
        return Err(CodecError::shape(
            "cga_forward",
            format!("C = N_g·C_g = {}", cfg.width()),
            format!("C = {c} with N_g = {}", cfg.n_groups),
        ));
    }
    let cg = cfg.group_channels;
    let q = p.q_proj.forward(g, x)?;
    let k = p.k_proj.forward(g, x)?;
    let v = p.v_proj.forward(g, x)?;

    // NCHW group slabs are contiguous, so (N·N_g, C_g, H·W) is a reshape.
    let gshape = vec![n * cfg.n_groups, cg, h * w];
    let q = g.reshape(&q, gshape.clone())?;
    let k = g.reshape(&k, gshape.clone())?;
    let v = g.reshape(&v, gshape)?;

    let scores = g.bmm(&q, &k, false, true)?;
    let scores = g.mul_scalar(&scores, T::from_f64(1.0 / (cg as f64).sqrt()));
    let attn = g.softmax(&scores, 2)?;
    let out = g.bmm(&attn, &v, false, false)?;
    let out = g.reshape(&out, vec![n, c, h, w])?;
    p.out_proj.forward(g, &out)
}

/// Attention-map branch of S-DA: decoupled 1-D depthwise convolutions or a
/// single fused kernel for the ablation mode.
#[derive(Clone)]
pub enum SpatialMix<T: Scalar> {
    Decoupled {
        vertical: Conv2dLayer<T>,
        horizontal: Conv2dLayer<T>,
    },
    Fused {
        conv: Conv2dLayer<T>,
    },
}

impl<T: Scalar> SpatialMix<T> {
    fn new(init: &mut Init, c: usize, cfg: &AttentionConfig) -> Self {
        if cfg.spatial_decoupling {
            SpatialMix::Decoupled {
                vertical: Conv2dLayer::depthwise(init, c, cfg.k_vertical, 1),
                horizontal: Conv2dLayer::depthwise(init, c, 1, cfg.k_horizontal),
            }
        } else {
            SpatialMix::Fused {
                conv: Conv2dLayer::depthwise(init, c, cfg.k_vertical, cfg.k_horizontal),
            }
        }
    }

    fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            SpatialMix::Decoupled { vertical, horizontal } => {
                horizontal.forward(g, &vertical.forward(g, x)?)
            }
            SpatialMix::Fused { conv } => conv.forward(g, x),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for SpatialMix<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        match self {
            SpatialMix::Decoupled { vertical, horizontal } => SpatialMix::Decoupled {
                vertical: vertical.map_named(&join(prefix, "vert"), f),
                horizontal: horizontal.map_named(&join(prefix, "horz"), f),
            },
            SpatialMix::Fused { conv } => SpatialMix::Fused {
                conv: conv.map_named(&join(prefix, "fused"), f),
            },
        }
    }
}

#[derive(Clone)]
pub struct SdaParams<T: Scalar> {
    pub v_lin: Conv2dLayer<T>,
    pub a_lin: Conv2dLayer<T>,
    pub a_mix: SpatialMix<T>,
    pub out_lin: Conv2dLayer<T>,
}

impl<T: Scalar> SdaParams<T> {
    pub fn new(init: &mut Init, c: usize, cfg: &AttentionConfig) -> Self {
        SdaParams {
            v_lin: Conv2dLayer::pointwise(init, c, c),
            a_lin: Conv2dLayer::pointwise(init, c, c),
            a_mix: SpatialMix::new(init, c, cfg),
            out_lin: Conv2dLayer::pointwise(init, c, c),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for SdaParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        SdaParams {
            v_lin: self.v_lin.map_named(&join(prefix, "v"), f),
            a_lin: self.a_lin.map_named(&join(prefix, "a"), f),
            a_mix: self.a_mix.map_named(&join(prefix, "mix"), f),
            out_lin: self.out_lin.map_named(&join(prefix, "out"), f),
        }
    }
}

/// Spatially decoupled attention: a per-pixel attention map built from
/// directional depthwise convolutions gates the value path by Hadamard
/// product. No sigmoid on the map by default.
pub fn sda_forward<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    p: &SdaParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let v = p.v_lin.forward(g, x)?;
    let mut a = p.a_mix.forward(g, &p.a_lin.forward(g, x)?)?;
    if cfg.sigmoid_on_attention {
        a = g.sigmoid(&a);
    }
    p.out_lin.forward(g, &g.mul(&a, &v)?)
}

#[derive(Clone)]
pub struct GffnParams<T: Scalar> {
    pub gate_point: Conv2dLayer<T>,
    pub gate_depth: Conv2dLayer<T>,
    pub value_point: Conv2dLayer<T>,
    pub value_depth: Conv2dLayer<T>,
    pub out: Conv2dLayer<T>,
}

impl<T: Scalar> GffnParams<T> {
    pub fn new(init: &mut Init, c: usize, expansion: usize) -> Self {
        let hidden = c * expansion;
        GffnParams {
            gate_point: Conv2dLayer::pointwise(init, c, hidden),
            gate_depth: Conv2dLayer::grouped(init, hidden, hidden, 3, 3, 1, 1, hidden),
            value_point: Conv2dLayer::pointwise(init, c, hidden),
            value_depth: Conv2dLayer::grouped(init, hidden, hidden, 3, 3, 1, 1, hidden),
            out: Conv2dLayer::pointwise(init, hidden, c),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for GffnParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        GffnParams {
            gate_point: self.gate_point.map_named(&join(prefix, "gp"), f),
            gate_depth: self.gate_depth.map_named(&join(prefix, "gd"), f),
            value_point: self.value_point.map_named(&join(prefix, "vp"), f),
            value_depth: self.value_depth.map_named(&join(prefix, "vd"), f),
            out: self.out.map_named(&join(prefix, "out"), f),
        }
    }
}

/// Gated feed-forward: two parallel 1×1 + depthwise-3×3 branches, one
/// passed through GELU, multiplied elementwise, then projected out.
pub fn gffn_forward<T: Scalar>(g: &Graph<T>, x: &Tensor<T>, p: &GffnParams<T>) -> Result<Tensor<T>> {
    let gate = p.gate_depth.forward(g, &p.gate_point.forward(g, x)?)?;
    let value = p.value_depth.forward(g, &p.value_point.forward(g, x)?)?;
    let gated = g.mul(&g.gelu(&gate), &value)?;
    p.out.forward(g, &gated)
}

#[derive(Clone)]
pub struct HatbParams<T: Scalar> {
    pub ln1: LayerNormLayer<T>,
    pub cga: CgaParams<T>,
    pub ln2: LayerNormLayer<T>,
    pub sda: SdaParams<T>,
    pub ln3: LayerNormLayer<T>,
    pub gffn: GffnParams<T>,
}

impl<T: Scalar> HatbParams<T> {
    pub fn new(init: &mut Init, cfg: &AttentionConfig, expansion: usize) -> Self {
        let c = cfg.width();
        HatbParams {
            ln1: LayerNormLayer::new(c),
            cga: CgaParams::new(init, c),
            ln2: LayerNormLayer::new(c),
            sda: SdaParams::new(init, c, cfg),
            ln3: LayerNormLayer::new(c),
            gffn: GffnParams::new(init, c, expansion),
        }
    }
}

impl<T: Scalar> ParamGroup<T> for HatbParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        HatbParams {
            ln1: self.ln1.map_named(&join(prefix, "ln1"), f),
            cga: self.cga.map_named(&join(prefix, "cga"), f),
            ln2: self.ln2.map_named(&join(prefix, "ln2"), f),
            sda: self.sda.map_named(&join(prefix, "sda"), f),
            ln3: self.ln3.map_named(&join(prefix, "ln3"), f),
            gffn: self.gffn.map_named(&join(prefix, "gffn"), f),
        }
    }
}

/// Pre-norm residual composition:
/// x₁ = x + CGA(LN(x)); x₂ = x₁ + SDA(LN(x₁)); out = x₂ + GFFN(LN(x₂)).
pub fn hatb_forward<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    p: &HatbParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let x1 = g.add(x, &cga_forward(g, &p.ln1.forward(g, x)?, &p.cga, cfg)?)?;
    let x2 = g.add(&x1, &sda_forward(g, &p.ln2.forward(g, &x1)?, &p.sda, cfg)?)?;
    g.add(&x2, &gffn_forward(g, &p.ln3.forward(g, &x2)?, &p.gffn)?)
}

pub(crate) fn map_blocks<T: Scalar>(
    blocks: &[HatbParams<T>],
    prefix: &str,
    f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>,
) -> Vec<HatbParams<T>> {
    map_vec(blocks, prefix, "b", f)
}

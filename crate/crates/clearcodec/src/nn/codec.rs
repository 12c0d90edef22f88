//! Feature encoder/decoder and the complete parameter set of one model.
//!
//! The encoder runs `n_stages` of [3×3 conv → pixel-unshuffle(2) →
//! blocks], then a 3×3 conv to the latent width. The decoder mirrors it
//! with [blocks → 3×3 conv → pixel-shuffle(2)] stages.

use super::attention::{hatb_forward, map_blocks, HatbParams};
use super::init::Init;
use super::layers::{map_vec, Conv2dLayer};
use super::params::{join, ParamGroup};
use super::CodecArchitecture;
use crate::entropy::{ContextParams, HyperParams, PriorParams};
use crate::error::{CodecError, Result};
use crate::fmath;
use crate::tensor::{Graph, Scalar, Tensor};

#[derive(Clone)]
pub struct DownStage<T: Scalar> {
    pub conv: Conv2dLayer<T>,
    pub blocks: Vec<HatbParams<T>>,
}

impl<T: Scalar> ParamGroup<T> for DownStage<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        DownStage {
            conv: self.conv.map_named(&join(prefix, "down"), f),
            blocks: map_blocks(&self.blocks, prefix, f),
        }
    }
}

#[derive(Clone)]
pub struct UpStage<T: Scalar> {
    pub blocks: Vec<HatbParams<T>>,
    pub conv: Conv2dLayer<T>,
}

impl<T: Scalar> ParamGroup<T> for UpStage<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        UpStage {
            blocks: map_blocks(&self.blocks, prefix, f),
            conv: self.conv.map_named(&join(prefix, "up"), f),
        }
    }
}

#[derive(Clone)]
pub struct EncoderParams<T: Scalar> {
    pub stages: Vec<DownStage<T>>,
    pub to_latent: Conv2dLayer<T>,
}

impl<T: Scalar> ParamGroup<T> for EncoderParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        EncoderParams {
            stages: map_vec(&self.stages, prefix, "s", f),
            to_latent: self.to_latent.map_named(&join(prefix, "latent"), f),
        }
    }
}

#[derive(Clone)]
pub struct DecoderParams<T: Scalar> {
    pub from_latent: Conv2dLayer<T>,
    pub stages: Vec<UpStage<T>>,
}

impl<T: Scalar> ParamGroup<T> for DecoderParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        DecoderParams {
            from_latent: self.from_latent.map_named(&join(prefix, "latent"), f),
            stages: map_vec(&self.stages, prefix, "s", f),
        }
    }
}

/// Every learnable tensor of one codec, plus its architecture.
#[derive(Clone)]
pub struct ModelParams<T: Scalar> {
    pub arch: CodecArchitecture,
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
    pub hyper: HyperParams<T>,
    pub context: ContextParams<T>,
    /// Raw (pre-softplus) per-channel quantization steps for ŷ.
    pub q_step_raw: Tensor<T>,
    /// Factorized prior over ẑ.
    pub z_prior: PriorParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(arch: CodecArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut init = Init::new(seed);
        let c = arch.stage_width();
        let att = &arch.attention;

        let mut stages = Vec::new();
        let mut in_ch = 3;
        for _ in 0..arch.n_stages {
            let conv = Conv2dLayer::new(&mut init, in_ch, c / 4, 3, 1, 1);
            let blocks = (0..arch.blocks_per_stage)
                .map(|_| HatbParams::new(&mut init, att, arch.ffn_expansion))
                .collect();
            stages.push(DownStage { conv, blocks });
            in_ch = c;
        }
        let to_latent = Conv2dLayer::new(&mut init, c, arch.latent_channels, 3, 1, 1);

        let from_latent = Conv2dLayer::new(&mut init, arch.latent_channels, c, 3, 1, 1);
        let mut up_stages = Vec::new();
        for s in 0..arch.n_stages {
            let last = s + 1 == arch.n_stages;
            let out_ch = if last { 3 } else { c };
            let blocks = (0..arch.blocks_per_stage)
                .map(|_| HatbParams::new(&mut init, att, arch.ffn_expansion))
                .collect();
            let mut conv = Conv2dLayer::new(&mut init, c, 4 * out_ch, 3, 1, 1);
            if last {
                // Start reconstructions mid-gray so the [0,1] clamp does
                // not zero gradients at initialization.
                conv = conv.with_bias_value(T::from_f64(0.5));
            }
            up_stages.push(UpStage { blocks, conv });
        }

        Ok(ModelParams {
            encoder: EncoderParams { stages, to_latent },
            decoder: DecoderParams {
                from_latent,
                stages: up_stages,
            },
            hyper: HyperParams::new(&mut init, arch.latent_channels, arch.hyper_channels),
            context: ContextParams::new(&mut init, arch.latent_channels),
            q_step_raw: Tensor::full(
                vec![arch.latent_channels],
                T::from_f64(fmath::softplus_inv(1.0)),
            ),
            z_prior: PriorParams::new(arch.hyper_channels),
            arch,
        })
    }

    /// Rebuild with every tensor converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Result<ModelParams<U>> {
        let mut by_name = std::collections::BTreeMap::new();
        self.visit(|name, t| {
            by_name.insert(name.to_string(), t.cast::<U>());
        });
        let blank = ModelParams::<U>::init(self.arch.clone(), 0)?;
        Ok(blank.map_named("", &mut |name, t| {
            let src = by_name.get(name).expect("identical structure");
            assert_eq!(src.shape(), t.shape());
            src.clone()
        }))
    }
}

impl<T: Scalar> ParamGroup<T> for ModelParams<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        ModelParams {
            arch: self.arch.clone(),
            encoder: self.encoder.map_named(&join(prefix, "enc"), f),
            decoder: self.decoder.map_named(&join(prefix, "dec"), f),
            hyper: self.hyper.map_named(&join(prefix, "hyper"), f),
            context: self.context.map_named(&join(prefix, "ctx"), f),
            q_step_raw: f(&join(prefix, "q_step_raw"), &self.q_step_raw),
            z_prior: self.z_prior.map_named(&join(prefix, "z_prior"), f),
        }
    }
}

/// x (normalized to [0,1], extents divisible by the total downsampling)
/// → latent y at 1/16 resolution with `latent_channels` channels.
pub fn encode_features<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    p: &EncoderParams<T>,
    arch: &CodecArchitecture,
) -> Result<Tensor<T>> {
    let (_, c_in, h, w) = x.dims4()?;
    let factor = arch.total_downsampling();
    if c_in != 3 {
        return Err(CodecError::shape("encode_features", "3 input channels", format!("{c_in}")));
    }
    if h < factor || w < factor {
        return Err(CodecError::shape(
            "encode_features",
            format!("input at least {factor}x{factor}"),
            format!("{h}x{w}"),
        ));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(CodecError::shape(
            "encode_features",
            format!("extents divisible by {factor}"),
            format!("{h}x{w}"),
        ));
    }
    let mut t = x.clone();
    for (si, stage) in p.stages.iter().enumerate() {
        t = stage.conv.forward(g, &t)?;
        t = g.pixel_unshuffle(&t, arch.resample[si])?;
        for b in &stage.blocks {
            t = hatb_forward(g, &t, b, &arch.attention)?;
        }
    }
    p.to_latent.forward(g, &t)
}

/// ŷ → reconstruction, cropped to `(orig_h, orig_w)` and clamped to [0,1].
pub fn decode_features<T: Scalar>(
    g: &Graph<T>,
    y_hat: &Tensor<T>,
    p: &DecoderParams<T>,
    arch: &CodecArchitecture,
    orig_h: usize,
    orig_w: usize,
) -> Result<Tensor<T>> {
    let (_, cy, yh, yw) = y_hat.dims4()?;
    let factor = arch.total_downsampling();
    if cy != arch.latent_channels {
        return Err(CodecError::shape(
            "decode_features",
            format!("{} latent channels", arch.latent_channels),
            format!("{cy}"),
        ));
    }
    if yh * factor < orig_h || yw * factor < orig_w {
        return Err(CodecError::shape(
            "decode_features",
            format!("latent covering {orig_h}x{orig_w}"),
            format!("{yh}x{yw} × {factor}"),
        ));
    }
    let mut t = p.from_latent.forward(g, y_hat)?;
    for (si, stage) in p.stages.iter().enumerate() {
        for b in &stage.blocks {
            t = hatb_forward(g, &t, b, &arch.attention)?;
        }
        t = stage.conv.forward(g, &t)?;
        t = g.pixel_shuffle(&t, arch.resample[arch.n_stages - 1 - si])?;
    }
    let t = g.crop_hw(&t, orig_h, orig_w)?;
    Ok(g.clamp_max(&g.clamp_min(&t, T::ZERO), T::ONE))
}

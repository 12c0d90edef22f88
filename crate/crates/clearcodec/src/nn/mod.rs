//! Network architecture: hybrid-attention blocks and the feature
//! encoder/decoder pair.

pub mod attention;
pub mod codec;
pub mod init;
pub mod layers;
pub mod params;

pub use attention::{cga_forward, gffn_forward, hatb_forward, sda_forward, HatbParams};
pub use codec::{decode_features, encode_features, DecoderParams, EncoderParams, ModelParams};
pub use params::ParamGroup;

use crate::error::{CodecError, Result};

/// Configuration of one hybrid-attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub n_groups: usize,
    pub group_channels: usize,
    pub k_vertical: usize,
    pub k_horizontal: usize,
    pub sigmoid_on_attention: bool,
    pub spatial_decoupling: bool,
}

impl AttentionConfig {
    /// Stage channel width C = N_g · C_g.
    pub fn width(&self) -> usize {
        self.n_groups * self.group_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.group_channels == 0 {
            return Err(CodecError::InvalidArgument(
                "attention: N_g and C_g must be positive".into(),
            ));
        }
        if self.k_vertical % 2 == 0 || self.k_horizontal % 2 == 0 {
            return Err(CodecError::InvalidArgument(format!(
                "attention: K_v and K_h must be odd for symmetric padding, got {}x{}",
                self.k_vertical, self.k_horizontal
            )));
        }
        Ok(())
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            n_groups: 4,
            group_channels: 32,
            k_vertical: 5,
            k_horizontal: 5,
            sigmoid_on_attention: false,
            spatial_decoupling: true,
        }
    }
}

/// Full codec architecture: stage layout plus latent/hyper widths.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecArchitecture {
    pub attention: AttentionConfig,
    pub n_stages: usize,
    pub blocks_per_stage: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    /// Spatial resampling factor per stage.
    pub resample: Vec<usize>,
    pub ffn_expansion: usize,
    /// Global quantization-step multiplier per quality index; larger means
    /// coarser quantization and fewer bits.
    pub q_step_multipliers: [f64; 4],
}

pub const QUALITY_LEVELS: usize = 4;

impl CodecArchitecture {
    pub fn stage_width(&self) -> usize {
        self.attention.width()
    }

    /// Product of per-stage resampling factors (16 for the 4×2 layout).
    pub fn total_downsampling(&self) -> usize {
        self.resample.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if self.n_stages == 0 || self.n_stages != self.resample.len() {
            return Err(CodecError::InvalidArgument(format!(
                "architecture: n_stages {} must match resample factors {:?}",
                self.n_stages, self.resample
            )));
        }
        if self.blocks_per_stage == 0 || self.latent_channels == 0 || self.hyper_channels == 0 {
            return Err(CodecError::InvalidArgument(
                "architecture: zero-sized component".into(),
            ));
        }
        for &r in &self.resample {
            if r != 2 {
                return Err(CodecError::InvalidArgument(
                    "architecture: only 2x per-stage resampling is supported".into(),
                ));
            }
        }
        if self.stage_width() % 4 != 0 {
            return Err(CodecError::InvalidArgument(
                "architecture: stage width must be divisible by 4 for pixel-unshuffle downsampling"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Desk-scale profile used by the fast tests: same topology as the
    /// full models, a fraction of the width.
    pub fn tiny() -> Self {
        CodecArchitecture {
            attention: AttentionConfig {
                group_channels: 8,
                ..AttentionConfig::default()
            },
            n_stages: 4,
            blocks_per_stage: 2,
            latent_channels: 64,
            hyper_channels: 32,
            resample: vec![2, 2, 2, 2],
            ffn_expansion: 2,
            q_step_multipliers: [2.0, 1.0, 0.5, 0.25],
        }
    }

    /// Small model: C_g = 32, 4 groups, 4 blocks per stage.
    pub fn ours_s() -> Self {
        CodecArchitecture {
            attention: AttentionConfig::default(),
            n_stages: 4,
            blocks_per_stage: 4,
            latent_channels: 192,
            hyper_channels: 64,
            resample: vec![2, 2, 2, 2],
            ffn_expansion: 2,
            q_step_multipliers: [2.0, 1.0, 0.5, 0.25],
        }
    }

    /// Large model: C_g = 48.
    pub fn ours_l() -> Self {
        CodecArchitecture {
            attention: AttentionConfig {
                group_channels: 48,
                ..AttentionConfig::default()
            },
            ..Self::ours_s()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "ours-s" => Ok(Self::ours_s()),
            "ours-l" => Ok(Self::ours_l()),
            other => Err(CodecError::InvalidArgument(format!(
                "unknown profile '{other}' (expected tiny, ours-s or ours-l)"
            ))),
        }
    }

    /// Name used in checkpoints; custom configurations serialize fields.
    pub fn profile_name(&self) -> &'static str {
        if *self == Self::tiny() {
            "tiny"
        } else if *self == Self::ours_s() {
            "ours-s"
        } else if *self == Self::ours_l() {
            "ours-l"
        } else {
            "custom"
        }
    }
}

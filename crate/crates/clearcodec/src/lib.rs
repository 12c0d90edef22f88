//! clearcodec — a desk-scale learned image codec that restores while it
//! compresses.
//!
//! One trained model handles clean and degraded inputs with the same
//! weights: the encoder maps an image to a compact latent, a hyperprior
//! plus a two-pass checkerboard context model predicts Gaussian
//! distributions for the quantized latent, and a range coder turns those
//! distributions into a real bitstream. The decoder reverses the process
//! and emits a restored image.
//!
//! Layout:
//! - [`tensor`] — dense NCHW tensors with reverse-mode autodiff
//! - [`nn`] — hybrid-attention transformer blocks and the feature codec
//! - [`entropy`] — quantization, hyperprior, spatial context, rate model
//! - [`coder`] — range coder, CDF tables, bitstream container
//! - [`pipeline`] — image → bitstream → image round trips
//! - [`degrade`] — procedural degradation synthesis and sampling policy
//! - [`train`] — rate-distortion training loop
//! - [`metrics`] — PSNR / MS-SSIM / Bjøntegaard deltas / evaluation runs
//! - [`cli`] — the `clearcodec` command-line entry points
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability, and `docs/FORMATS.md` for the bit-exact file formats.

pub mod checkpoint;
pub mod cli;
pub mod coder;
pub mod degrade;
pub mod entropy;
pub mod error;
pub mod fmath;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{CodecError, Result};

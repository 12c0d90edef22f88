//! Convolution and normalization layers as parameter structs.

use super::init::Init;
use super::params::{join, ParamGroup};
use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone)]
pub struct Conv2dLayer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(init: &mut Init, ci: usize, co: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self::grouped(init, ci, co, k, k, stride, pad, 1)
    }

    /// 1×1 pointwise convolution (the codec's "linear" layer).
    pub fn pointwise(init: &mut Init, ci: usize, co: usize) -> Self {
        Self::grouped(init, ci, co, 1, 1, 1, 0, 1)
    }

    /// Depthwise convolution with a (kh, kw) kernel and symmetric padding.
    pub fn depthwise(init: &mut Init, c: usize, kh: usize, kw: usize) -> Self {
        Self::grouped(init, c, c, kh, kw, 1, 0, c).with_pad_hw()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grouped(
        init: &mut Init,
        ci: usize,
        co: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Self {
        let cig = ci / groups;
        Conv2dLayer {
            weight: init.conv_weight(co, cig, kh, kw),
            bias: init.conv_bias(co, cig * kh * kw),
            stride,
            pad,
            groups,
        }
    }

    fn with_pad_hw(mut self) -> Self {
        // Depthwise kernels keep spatial size; odd extents give symmetric
        // padding (asymmetric kernels are handled in forward).
        self.pad = 0;
        self
    }

    pub fn with_bias_value(mut self, v: T) -> Self {
        self.bias = Tensor::full(self.bias.shape().to_vec(), v);
        self
    }

    pub fn zeroed(mut self) -> Self {
        self.weight = Tensor::zeros(self.weight.shape().to_vec());
        self.bias = Tensor::zeros(self.bias.shape().to_vec());
        self
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, kh, kw) = self.weight.dims4()?;
        if self.pad == 0 && (kh > 1 || kw > 1) && self.stride == 1 {
            // Asymmetric (1×K / K×1) kernels: pad per axis to keep shape.
            return conv_same(g, x, &self.weight, &self.bias, self.groups);
        }
        g.conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad, self.groups)
    }
}

/// Stride-1 convolution with shape-preserving symmetric padding,
/// implemented as zero-pad via the conv pad argument per axis.
fn conv_same<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    groups: usize,
) -> Result<Tensor<T>> {
    let (_, _, kh, kw) = weight.dims4()?;
    if kh == kw {
        return g.conv2d(x, weight, Some(bias), 1, (kh - 1) / 2, groups);
    }
    // conv2d takes one symmetric pad; equalize by padding to the larger
    // kernel extent and cropping the excess rows/columns afterwards.
    let pad = (kh.max(kw) - 1) / 2;
    let y = g.conv2d(x, weight, Some(bias), 1, pad, groups)?;
    let (_, _, yh, yw) = y.dims4()?;
    let (_, _, xh, xw) = x.dims4()?;
    // Centered crop back to the input extent.
    let oh = (yh - xh) / 2;
    let ow = (yw - xw) / 2;
    crop_offset(g, &y, oh, ow, xh, xw)
}

/// Crop with an offset by slicing twice through crop_hw on a shifted view.
fn crop_offset<T: Scalar>(
    g: &Graph<T>,
    x: &Tensor<T>,
    oh: usize,
    ow: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    if oh == 0 && ow == 0 {
        return g.crop_hw(x, h, w);
    }
    // Flip, crop the tail, flip back would need a flip op; instead use a
    // dedicated path: build index copy through reshape-free crop.
    g.crop_hw_offset(x, oh, ow, h, w)
}

impl<T: Scalar> ParamGroup<T> for Conv2dLayer<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        Conv2dLayer {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: f(&join(prefix, "bias"), &self.bias),
            stride: self.stride,
            pad: self.pad,
            groups: self.groups,
        }
    }
}

#[derive(Clone)]
pub struct LayerNormLayer<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNormLayer<T> {
    pub fn new(c: usize) -> Self {
        LayerNormLayer {
            gamma: Tensor::ones(vec![c]),
            beta: Tensor::zeros(vec![c]),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        g.layer_norm(x, &self.gamma, &self.beta, T::from_f64(LAYER_NORM_EPS))
    }
}

impl<T: Scalar> ParamGroup<T> for LayerNormLayer<T> {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self {
        LayerNormLayer {
            gamma: f(&join(prefix, "gamma"), &self.gamma),
            beta: f(&join(prefix, "beta"), &self.beta),
        }
    }
}

pub(crate) fn map_vec<T: Scalar, P: ParamGroup<T>>(
    items: &[P],
    prefix: &str,
    stem: &str,
    f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>,
) -> Vec<P> {
    items
        .iter()
        .enumerate()
        .map(|(i, p)| p.map_named(&join(prefix, &format!("{stem}{i}")), f))
        .collect()
}

//! conv2d and pixel shuffle kernels with their gradients.
//!
//! Every output element is reduced by one sequential loop in a fixed
//! (ci, kh, kw) order; parallelism only splits whole output planes, so
//! results do not depend on the thread count.

use rayon::prelude::*;

use super::graph::{acc_grad, Arg, Graph, Op};
use super::{shape_str, Scalar, Tensor};
use crate::error::{CodecError, Result};

/// Below this many MACs the kernels stay single-threaded.
const PAR_THRESHOLD: u64 = 1 << 17;

pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub cig: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

fn conv_dims<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<ConvDims> {
    let (n, ci, h, w) = x.dims4()?;
    let (co, cig, kh, kw) = weight.dims4()?;
    if groups == 0 || stride == 0 {
        return Err(CodecError::InvalidArgument(
            "conv2d: stride and groups must be positive".into(),
        ));
    }
    if ci % groups != 0 || co % groups != 0 {
        return Err(CodecError::shape(
            "conv2d channel/group",
            format!("channels divisible by groups={groups}"),
            format!("ci={ci}, co={co}"),
        ));
    }
    if cig != ci / groups {
        return Err(CodecError::shape(
            "conv2d kernel",
            format!("[{co}, {}, kh, kw]", ci / groups),
            shape_str(weight.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(CodecError::shape("conv2d bias", format!("[{co}]"), shape_str(b.shape())));
        }
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(CodecError::shape(
            "conv2d spatial",
            format!("input at least {kh}x{kw} after padding {pad}"),
            format!("{h}x{w}"),
        ));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvDims {
        n,
        ci,
        h,
        w,
        co,
        cig,
        kh,
        kw,
        ho,
        wo,
    })
}

#[allow(clippy::too_many_arguments)]
fn conv_plane<T: Scalar>(
    out: &mut [T],
    xv: &[T],
    wv: &[T],
    bias: T,
    d: &ConvDims,
    stride: usize,
    pad: usize,
    groups: usize,
    n_idx: usize,
    co: usize,
) {
    let cog = d.co / groups;
    let gi = co / cog;
    let x_base = n_idx * d.ci * d.h * d.w;
    let w_base = co * d.cig * d.kh * d.kw;
    // 1x1 stride-1 fast path: a matmul row over the spatial plane.
    if d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0 {
        out.fill(bias);
        for cil in 0..d.cig {
            let xc = &xv[x_base + (gi * d.cig + cil) * d.h * d.w..][..d.h * d.w];
            let wgt = wv[w_base + cil];
            for (o, &xvv) in out.iter_mut().zip(xc) {
                *o = *o + wgt * xvv;
            }
        }
        return;
    }
    for oh in 0..d.ho {
        for ow in 0..d.wo {
            let mut acc = bias;
            for cil in 0..d.cig {
                let xc = x_base + (gi * d.cig + cil) * d.h * d.w;
                let wc = w_base + cil * d.kh * d.kw;
                for kh in 0..d.kh {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let row = xc + ih as usize * d.w;
                    for kw in 0..d.kw {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        if iw < 0 || iw >= d.w as isize {
                            continue;
                        }
                        acc = acc + wv[wc + kh * d.kw + kw] * xv[row + iw as usize];
                    }
                }
            }
            out[oh * d.wo + ow] = acc;
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D convolution over NCHW input.
    ///
    /// `weight` has shape [co, ci/groups, kh, kw]; output spatial size is
    /// floor((H + 2·pad − k)/stride) + 1 per axis.
    pub fn conv2d(
        &self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Tensor<T>> {
        let d = conv_dims(x, weight, bias, stride, pad, groups)?;
        let macs = (d.n * d.co * d.ho * d.wo * d.cig * d.kh * d.kw) as u64;
        self.add_macs(macs);

        let plane = d.ho * d.wo;
        let mut out = vec![T::ZERO; d.n * d.co * plane];
        let xv = x.data();
        let wv = weight.data();
        let get_bias = |co: usize| bias.map(|b| b.data()[co]).unwrap_or(T::ZERO);

        let work = |(idx, slab): (usize, &mut [T])| {
            let n_idx = idx / d.co;
            let co = idx % d.co;
            conv_plane(slab, xv, wv, get_bias(co), &d, stride, pad, groups, n_idx, co);
        };
        if macs >= PAR_THRESHOLD {
            out.par_chunks_mut(plane).enumerate().for_each(work);
        } else {
            out.chunks_mut(plane).enumerate().for_each(work);
        }

        let tracked = x.requires_grad()
            || weight.requires_grad()
            || bias.map(|b| b.requires_grad()).unwrap_or(false);
        Ok(self.push(
            Op::Conv2d {
                x: Arg::of(x),
                w: Arg::of(weight),
                b: bias.map(Arg::of),
                stride,
                pad,
                groups,
            },
            vec![d.n, d.co, d.ho, d.wo],
            out,
            tracked,
        ))
    }

    /// Sub-pixel upsampling: (N, C, H, W) → (N, C/r², rH, rW).
    pub fn pixel_shuffle(&self, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(CodecError::shape(
                "pixel_shuffle",
                format!("channels divisible by r²={}", r * r),
                format!("C={c}"),
            ));
        }
        let out = shuffle_data(x.data(), n, c, h, w, r);
        Ok(self.push(
            Op::PixelShuffle { x: Arg::of(x), r },
            vec![n, c / (r * r), h * r, w * r],
            out,
            x.requires_grad(),
        ))
    }

    /// Space-to-depth downsampling: (N, C, H, W) → (N, C·r², H/r, W/r).
    pub fn pixel_unshuffle(&self, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(CodecError::shape(
                "pixel_unshuffle",
                format!("H, W divisible by r={r}"),
                format!("{h}x{w}"),
            ));
        }
        let out = unshuffle_data(x.data(), n, c, h, w, r);
        Ok(self.push(
            Op::PixelUnshuffle { x: Arg::of(x), r },
            vec![n, c * r * r, h / r, w / r],
            out,
            x.requires_grad(),
        ))
    }
}

/// (N, C, H, W) → (N, C/r², rH, rW) data movement.
fn shuffle_data<T: Scalar>(xv: &[T], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let co = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::ZERO; n * co * oh * ow];
    for ni in 0..n {
        for coi in 0..co {
            for y in 0..oh {
                for x_ in 0..ow {
                    let ci = coi * r * r + (y % r) * r + (x_ % r);
                    let src = ((ni * c + ci) * h + y / r) * w + x_ / r;
                    out[((ni * co + coi) * oh + y) * ow + x_] = xv[src];
                }
            }
        }
    }
    out
}

/// (N, C, H, W) → (N, C·r², H/r, W/r) data movement.
fn unshuffle_data<T: Scalar>(xv: &[T], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let co = c * r * r;
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![T::ZERO; n * co * oh * ow];
    for ni in 0..n {
        for coi in 0..co {
            let ci = coi / (r * r);
            let dr = (coi % (r * r)) / r;
            let dc = coi % r;
            for y in 0..oh {
                for x_ in 0..ow {
                    let src = ((ni * c + ci) * h + y * r + dr) * w + x_ * r + dc;
                    out[((ni * co + coi) * oh + y) * ow + x_] = xv[src];
                }
            }
        }
    }
    out
}

pub(crate) fn pixel_shuffle_backward<T: Scalar>(
    x: &Arg<T>,
    r: usize,
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, co, oh, ow) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let dx = unshuffle_data(g, n, co, oh, ow, r);
    debug_assert_eq!(dx.len(), x.val.numel());
    acc_grad(bufs, x.node, dx);
}

pub(crate) fn pixel_unshuffle_backward<T: Scalar>(
    x: &Arg<T>,
    r: usize,
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, co, oh, ow) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let dx = shuffle_data(g, n, co, oh, ow, r);
    debug_assert_eq!(dx.len(), x.val.numel());
    acc_grad(bufs, x.node, dx);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Arg<T>,
    w: &Arg<T>,
    b: Option<&Arg<T>>,
    stride: usize,
    pad: usize,
    groups: usize,
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let d = conv_dims(&x.val, &w.val, b.map(|a| &a.val), stride, pad, groups)
        .expect("conv2d backward re-derives validated dims");
    debug_assert_eq!(out_shape, [d.n, d.co, d.ho, d.wo]);
    let xv = x.val.data();
    let wv = w.val.data();
    let cog = d.co / groups;
    let big = (d.n * d.co * d.ho * d.wo * d.cig * d.kh * d.kw) as u64 >= PAR_THRESHOLD;

    if let Some(barg) = b {
        if barg.node.is_some() {
            let mut db = vec![T::ZERO; d.co];
            for ni in 0..d.n {
                for (co, slot) in db.iter_mut().enumerate() {
                    let base = (ni * d.co + co) * d.ho * d.wo;
                    for i in 0..d.ho * d.wo {
                        *slot = *slot + g[base + i];
                    }
                }
            }
            acc_grad(bufs, barg.node, db);
        }
    }

    if w.node.is_some() {
        let mut dw = vec![T::ZERO; w.val.numel()];
        let kvol = d.cig * d.kh * d.kw;
        let work = |(co, slab): (usize, &mut [T])| {
            let gi = co / cog;
            for cil in 0..d.cig {
                for kh in 0..d.kh {
                    for kw in 0..d.kw {
                        let mut acc = T::ZERO;
                        for ni in 0..d.n {
                            let g_base = (ni * d.co + co) * d.ho * d.wo;
                            let x_base = (ni * d.ci + gi * d.cig + cil) * d.h * d.w;
                            for oh in 0..d.ho {
                                let ih = (oh * stride + kh) as isize - pad as isize;
                                if ih < 0 || ih >= d.h as isize {
                                    continue;
                                }
                                let xrow = x_base + ih as usize * d.w;
                                let grow = g_base + oh * d.wo;
                                for ow in 0..d.wo {
                                    let iw = (ow * stride + kw) as isize - pad as isize;
                                    if iw < 0 || iw >= d.w as isize {
                                        continue;
                                    }
                                    acc = acc + g[grow + ow] * xv[xrow + iw as usize];
                                }
                            }
                        }
                        slab[(cil * d.kh + kh) * d.kw + kw] = acc;
                    }
                }
            }
        };
        if big {
            dw.par_chunks_mut(kvol).enumerate().for_each(work);
        } else {
            dw.chunks_mut(kvol).enumerate().for_each(work);
        }
        acc_grad(bufs, w.node, dw);
    }

    if x.node.is_some() {
        let mut dx = vec![T::ZERO; x.val.numel()];
        let plane = d.h * d.w;
        let work = |(idx, slab): (usize, &mut [T])| {
            let ni = idx / d.ci;
            let ci = idx % d.ci;
            let gi = ci / d.cig;
            let cil = ci % d.cig;
            for ih in 0..d.h {
                for iw in 0..d.w {
                    let mut acc = T::ZERO;
                    for col in 0..cog {
                        let co = gi * cog + col;
                        let g_base = (ni * d.co + co) * d.ho * d.wo;
                        let w_base = (co * d.cig + cil) * d.kh * d.kw;
                        for kh in 0..d.kh {
                            let oh_num = ih + pad;
                            if oh_num < kh {
                                continue;
                            }
                            let oh_s = oh_num - kh;
                            if oh_s % stride != 0 {
                                continue;
                            }
                            let oh = oh_s / stride;
                            if oh >= d.ho {
                                continue;
                            }
                            for kw in 0..d.kw {
                                let ow_num = iw + pad;
                                if ow_num < kw {
                                    continue;
                                }
                                let ow_s = ow_num - kw;
                                if ow_s % stride != 0 {
                                    continue;
                                }
                                let ow = ow_s / stride;
                                if ow >= d.wo {
                                    continue;
                                }
                                acc = acc + wv[w_base + kh * d.kw + kw] * g[g_base + oh * d.wo + ow];
                            }
                        }
                    }
                    slab[ih * d.w + iw] = acc;
                }
            }
        };
        if big {
            dx.par_chunks_mut(plane).enumerate().for_each(work);
        } else {
            dx.chunks_mut(plane).enumerate().for_each(work);
        }
        acc_grad(bufs, x.node, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn conv_identity_kernel() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 1, 3, 3], ramp(9)).unwrap();
        let k = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = g.conv2d(&x, &k, None, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_zero_kernel_annihilates() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 2, 4, 4], ramp(32)).unwrap();
        let k = Tensor::zeros(vec![3, 2, 3, 3]);
        let y = g.conv2d(&x, &k, None, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    /// Independent sliding-window oracle for an all-ones 3x3 kernel.
    #[test]
    fn conv_ones_kernel_matches_window_sums() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 1, 4, 4], ramp(16)).unwrap();
        let k = Tensor::ones(vec![1, 1, 3, 3]);
        let y = g.conv2d(&x, &k, None, 1, 1, 1).unwrap();
        let xv = x.data();
        for oh in 0..4usize {
            for ow in 0..4usize {
                let mut want = 0.0;
                for dh in -1i32..=1 {
                    for dw in -1i32..=1 {
                        let (ih, iw) = (oh as i32 + dh, ow as i32 + dw);
                        if (0..4).contains(&ih) && (0..4).contains(&iw) {
                            want += xv[(ih * 4 + iw) as usize];
                        }
                    }
                }
                assert_eq!(y.data()[oh * 4 + ow], want, "at ({oh},{ow})");
            }
        }
    }

    #[test]
    fn conv_shape_formula_and_errors() {
        let g = Graph::<f32>::inference();
        let x = Tensor::<f32>::zeros(vec![2, 4, 9, 7]);
        let k = Tensor::<f32>::zeros(vec![6, 2, 3, 3]);
        let y = g.conv2d(&x, &k, None, 2, 1, 2).unwrap();
        // floor((9 + 2 - 3)/2) + 1 = 5, floor((7 + 2 - 3)/2) + 1 = 4
        assert_eq!(y.shape(), &[2, 6, 5, 4]);

        let bad_k = Tensor::<f32>::zeros(vec![6, 3, 3, 3]);
        let err = g.conv2d(&x, &bad_k, None, 1, 1, 2).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("[6, 2, kh, kw]") && msg.contains("[6, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn pixel_shuffle_r1_is_identity() {
        let g = Graph::<f32>::inference();
        let x = Tensor::from_vec(vec![1, 3, 2, 2], (0..12).map(|i| i as f32).collect()).unwrap();
        assert_eq!(g.pixel_shuffle(&x, 1).unwrap().data(), x.data());
        assert_eq!(g.pixel_unshuffle(&x, 1).unwrap().data(), x.data());
    }

    /// Explicit index-map oracle for the (1,4,2,2) -> (1,1,4,4) case.
    #[test]
    fn pixel_shuffle_index_map() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 4, 2, 2], ramp(16)).unwrap();
        let y = g.pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for oh in 0..4usize {
            for ow in 0..4usize {
                let ci = (oh % 2) * 2 + (ow % 2);
                let want = x.data()[ci * 4 + (oh / 2) * 2 + ow / 2];
                assert_eq!(y.data()[oh * 4 + ow], want);
            }
        }
    }

    #[test]
    fn unshuffle_inverts_shuffle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..2 * 8 * 6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(vec![2, 8, 6, 4], data).unwrap();
        let g = Graph::<f32>::inference();
        let up = g.pixel_shuffle(&x, 2).unwrap();
        assert_eq!(up.shape(), &[2, 2, 12, 8]);
        let back = g.pixel_unshuffle(&up, 2).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn pixel_shuffle_divisibility_errors() {
        let g = Graph::<f32>::inference();
        let x = Tensor::<f32>::zeros(vec![1, 3, 2, 2]);
        assert!(g.pixel_shuffle(&x, 2).is_err());
        let x = Tensor::<f32>::zeros(vec![1, 4, 3, 2]);
        assert!(g.pixel_unshuffle(&x, 2).is_err());
    }
}

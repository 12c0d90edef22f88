//! Shape movement (reshape, concat, slice, crop) and batched matmul.

use rayon::prelude::*;

use super::graph::{acc_grad, Arg, Graph, Op};
use super::{shape_str, Scalar, Tensor};
use crate::error::{CodecError, Result};

const PAR_THRESHOLD: u64 = 1 << 17;

impl<T: Scalar> Graph<T> {
    /// Reinterpret the data with a new shape of equal element count.
    pub fn reshape(&self, x: &Tensor<T>, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(CodecError::shape(
                "reshape",
                format!("{} elements", x.numel()),
                format!("{shape:?} = {numel} elements"),
            ));
        }
        Ok(self.push(
            Op::Reshape { x: Arg::of(x) },
            shape,
            x.data().to_vec(),
            x.requires_grad(),
        ))
    }

    /// Batched matrix multiply with optional per-operand transposition:
    /// `(B, m, k) × (B, k, n) → (B, m, n)` after applying the flags.
    pub fn bmm(&self, a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
        let (batch, m, k, n) = bmm_dims(a.shape(), ta, b.shape(), tb)?;
        self.add_macs((batch * m * n * k) as u64);
        let out = bmm_raw(a.data(), a.shape(), ta, b.data(), b.shape(), tb);
        let tracked = a.requires_grad() || b.requires_grad();
        Ok(self.push(
            Op::Bmm {
                a: Arg::of(a),
                b: Arg::of(b),
                ta,
                tb,
            },
            vec![batch, m, n],
            out,
            tracked,
        ))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_c(&self, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(CodecError::InvalidArgument("concat_c: no inputs".into()));
        }
        let (n, _, h, w) = parts[0].dims4()?;
        let mut c_total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(CodecError::shape(
                    "concat_c",
                    format!("[{n}, *, {h}, {w}]"),
                    shape_str(p.shape()),
                ));
            }
            c_total += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c_total * hw);
        for ni in 0..n {
            for p in parts {
                let pc = p.shape()[1];
                let base = ni * pc * hw;
                out.extend_from_slice(&p.data()[base..base + pc * hw]);
            }
        }
        let tracked = parts.iter().any(|p| p.requires_grad());
        Ok(self.push(
            Op::ConcatC {
                parts: parts.iter().map(|p| Arg::of(p)).collect(),
            },
            vec![n, c_total, h, w],
            out,
            tracked,
        ))
    }

    /// Take channels `[start, start+len)` of an NCHW tensor.
    pub fn slice_c(&self, x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if start + len > c {
            return Err(CodecError::shape(
                "slice_c",
                format!("start+len <= {c}"),
                format!("{start}+{len}"),
            ));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            let base = (ni * c + start) * hw;
            out.extend_from_slice(&x.data()[base..base + len * hw]);
        }
        Ok(self.push(
            Op::SliceC {
                x: Arg::of(x),
                start,
            },
            vec![n, len, h, w],
            out,
            x.requires_grad(),
        ))
    }

    /// Keep the top-left `h2 × w2` spatial window.
    pub fn crop_hw(&self, x: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
        self.crop_hw_offset(x, 0, 0, h2, w2)
    }

    /// Keep the `h2 × w2` window whose top-left corner is (oh, ow).
    pub fn crop_hw_offset(
        &self,
        x: &Tensor<T>,
        oh: usize,
        ow: usize,
        h2: usize,
        w2: usize,
    ) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if oh + h2 > h || ow + w2 > w {
            return Err(CodecError::shape(
                "crop_hw",
                format!("crop within {h}x{w}"),
                format!("{h2}x{w2} at ({oh},{ow})"),
            ));
        }
        let mut out = Vec::with_capacity(n * c * h2 * w2);
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w + oh * w + ow;
                for y in 0..h2 {
                    out.extend_from_slice(&x.data()[base + y * w..base + y * w + w2]);
                }
            }
        }
        Ok(self.push(
            Op::CropHw {
                x: Arg::of(x),
                oh,
                ow,
            },
            vec![n, c, h2, w2],
            out,
            x.requires_grad(),
        ))
    }
}

fn bmm_dims(a: &[usize], ta: bool, b: &[usize], tb: bool) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
        return Err(CodecError::shape(
            "bmm",
            "two (B, rows, cols) tensors with equal B",
            format!("{a:?} × {b:?}"),
        ));
    }
    let (m, k) = if ta { (a[2], a[1]) } else { (a[1], a[2]) };
    let (k2, n) = if tb { (b[2], b[1]) } else { (b[1], b[2]) };
    if k != k2 {
        return Err(CodecError::shape(
            "bmm inner",
            format!("inner dim {k}"),
            format!("inner dim {k2}"),
        ));
    }
    Ok((a[0], m, k, n))
}

/// Z = X_eff · Y_eff per batch element, X_eff = tx ? Xᵀ : X.
pub(crate) fn bmm_raw<T: Scalar>(
    a: &[T],
    ashape: &[usize],
    ta: bool,
    b: &[T],
    bshape: &[usize],
    tb: bool,
) -> Vec<T> {
    let (batch, m, k, n) = bmm_dims(ashape, ta, bshape, tb).expect("bmm_raw dims pre-validated");
    let (ar, ac) = (ashape[1], ashape[2]);
    let (br, bc) = (bshape[1], bshape[2]);
    let mut out = vec![T::ZERO; batch * m * n];
    let work = |(row_idx, slab): (usize, &mut [T])| {
        let bi = row_idx / m;
        let mi = row_idx % m;
        let abase = bi * ar * ac;
        let bbase = bi * br * bc;
        for ni in 0..n {
            let mut acc = T::ZERO;
            for ki in 0..k {
                let av = if ta {
                    a[abase + ki * ac + mi]
                } else {
                    a[abase + mi * ac + ki]
                };
                let bv = if tb {
                    b[bbase + ni * bc + ki]
                } else {
                    b[bbase + ki * bc + ni]
                };
                acc = acc + av * bv;
            }
            slab[ni] = acc;
        }
    };
    if (batch * m * n * k) as u64 >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(work);
    } else {
        out.chunks_mut(n).enumerate().for_each(work);
    }
    out
}

pub(crate) fn bmm_backward<T: Scalar>(
    a: &Arg<T>,
    b: &Arg<T>,
    ta: bool,
    tb: bool,
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (batch, m, _, n) = bmm_dims(a.val.shape(), ta, b.val.shape(), tb).expect("validated");
    let gshape = [batch, m, n];
    if a.node.is_some() {
        let da = if ta {
            bmm_raw(b.val.data(), b.val.shape(), tb, g, &gshape, true)
        } else {
            bmm_raw(g, &gshape, false, b.val.data(), b.val.shape(), !tb)
        };
        acc_grad(bufs, a.node, da);
    }
    if b.node.is_some() {
        let db = if tb {
            bmm_raw(g, &gshape, true, a.val.data(), a.val.shape(), ta)
        } else {
            bmm_raw(a.val.data(), a.val.shape(), !ta, g, &gshape, false)
        };
        acc_grad(bufs, b.node, db);
    }
}

pub(crate) fn concat_c_backward<T: Scalar>(
    parts: &[Arg<T>],
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, c_total, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let hw = h * w;
    let mut offset = 0;
    for p in parts {
        let pc = p.val.shape()[1];
        if p.node.is_some() {
            let mut dp = Vec::with_capacity(n * pc * hw);
            for ni in 0..n {
                let base = (ni * c_total + offset) * hw;
                dp.extend_from_slice(&g[base..base + pc * hw]);
            }
            acc_grad(bufs, p.node, dp);
        }
        offset += pc;
    }
}

pub(crate) fn slice_c_backward<T: Scalar>(
    x: &Arg<T>,
    start: usize,
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, c, h, w) = x.val.dims4().expect("saved 4-D");
    let len = out_shape[1];
    let hw = h * w;
    let mut dx = vec![T::ZERO; x.val.numel()];
    for ni in 0..n {
        let dst = (ni * c + start) * hw;
        let src = ni * len * hw;
        dx[dst..dst + len * hw].copy_from_slice(&g[src..src + len * hw]);
    }
    acc_grad(bufs, x.node, dx);
}

pub(crate) fn crop_hw_backward<T: Scalar>(
    x: &Arg<T>,
    oh: usize,
    ow: usize,
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, c, h, w) = x.val.dims4().expect("saved 4-D");
    let (h2, w2) = (out_shape[2], out_shape[3]);
    let mut dx = vec![T::ZERO; x.val.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let dst_base = (ni * c + ci) * h * w + oh * w + ow;
            let src_base = (ni * c + ci) * h2 * w2;
            for y in 0..h2 {
                dx[dst_base + y * w..dst_base + y * w + w2]
                    .copy_from_slice(&g[src_base + y * w2..src_base + (y + 1) * w2]);
            }
        }
    }
    acc_grad(bufs, x.node, dx);
}

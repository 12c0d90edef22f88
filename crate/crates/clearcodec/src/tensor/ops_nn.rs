//! Network nonlinearities and normalizers.
//!
//! Transcendental evaluation goes through [`crate::fmath`] so forward
//! values are bit-identical across platforms.

use super::graph::{acc_grad, Arg, Graph, Op};
use super::{shape_str, Scalar, Tensor};
use crate::error::{CodecError, Result};
use crate::fmath;

const GELU_S: f64 = 0.797_884_560_802_865_355_88; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl<T: Scalar> Graph<T> {
    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&self, x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if axis >= x.shape().len() {
            return Err(CodecError::InvalidArgument(format!(
                "softmax: axis {axis} out of range for shape {:?}",
                x.shape()
            )));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite("softmax input".into()));
        }
        let len = x.shape()[axis];
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let outer: usize = x.shape()[..axis].iter().product();
        let xv = x.data();
        let mut out = vec![T::ZERO; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = xv[idx(0)];
                for j in 1..len {
                    mx = mx.maximum(xv[idx(j)]);
                }
                let mut sum = T::ZERO;
                for j in 0..len {
                    let e = T::from_f64(fmath::exp((xv[idx(j)] - mx).to_f64()));
                    out[idx(j)] = e;
                    sum = sum + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / sum;
                }
            }
        }
        let y = Tensor::from_vec(x.shape().to_vec(), out)?;
        Ok(self.push(
            Op::Softmax {
                x_node: x.node(),
                y: y.clone(),
                axis,
            },
            x.shape().to_vec(),
            y.data().to_vec(),
            x.requires_grad(),
        ))
    }

    /// Layer normalization over the channel axis of an NCHW tensor: each
    /// spatial position is normalized across its C values, then scaled by
    /// `gamma` and shifted by `beta` (both of length C).
    pub fn layer_norm(
        &self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(CodecError::shape(
                "layer_norm affine",
                format!("[{c}]"),
                format!("{} / {}", shape_str(gamma.shape()), shape_str(beta.shape())),
            ));
        }
        let hw = h * w;
        let xv = x.data();
        let gv = gamma.data();
        let bv = beta.data();
        let inv_c = T::from_f64(1.0 / c as f64);
        let mut out = vec![T::ZERO; xv.len()];
        let mut means = vec![T::ZERO; n * hw];
        let mut rstds = vec![T::ZERO; n * hw];
        for ni in 0..n {
            for p in 0..hw {
                let at = |ci: usize| (ni * c + ci) * hw + p;
                let mut mean = T::ZERO;
                for ci in 0..c {
                    mean = mean + xv[at(ci)];
                }
                mean = mean * inv_c;
                let mut var = T::ZERO;
                for ci in 0..c {
                    let d = xv[at(ci)] - mean;
                    var = var + d * d;
                }
                var = var * inv_c;
                let rstd = T::ONE / (var + eps).sqrt();
                means[ni * hw + p] = mean;
                rstds[ni * hw + p] = rstd;
                for ci in 0..c {
                    out[at(ci)] = (xv[at(ci)] - mean) * rstd * gv[ci] + bv[ci];
                }
            }
        }
        let tracked = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.push(
            Op::LayerNorm {
                x: Arg::of(x),
                gamma: Arg::of(gamma),
                beta: Arg::of(beta),
                eps,
                mean: means,
                rstd: rstds,
            },
            x.shape().to_vec(),
            out,
            tracked,
        ))
    }

    /// GELU in its tanh form.
    pub fn gelu(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .map(|&v| {
                let xf = v.to_f64();
                let u = GELU_S * (xf + GELU_C * xf * xf * xf);
                T::from_f64(0.5 * xf * (1.0 + fmath::tanh(u)))
            })
            .collect();
        self.push(Op::Gelu(Arg::of(x)), x.shape().to_vec(), data, x.requires_grad())
    }

    /// softplus(x) = ln(1 + e^x).
    pub fn softplus(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .map(|&v| T::from_f64(fmath::softplus(v.to_f64())))
            .collect();
        self.push(Op::Softplus(Arg::of(x)), x.shape().to_vec(), data, x.requires_grad())
    }

    pub fn sigmoid(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .map(|&v| T::from_f64(fmath::sigmoid(v.to_f64())))
            .collect();
        self.push(Op::Sigmoid(Arg::of(x)), x.shape().to_vec(), data, x.requires_grad())
    }

    /// Standard normal CDF Φ(x), elementwise.
    pub fn gauss_cdf(&self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .map(|&v| T::from_f64(fmath::gauss_cdf(v.to_f64())))
            .collect();
        self.push(Op::GaussCdf(Arg::of(x)), x.shape().to_vec(), data, x.requires_grad())
    }
}

pub(crate) fn softmax_backward<T: Scalar>(
    x_node: Option<super::NodeId>,
    y: &Tensor<T>,
    axis: usize,
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let len = y.shape()[axis];
    let inner: usize = y.shape()[axis + 1..].iter().product();
    let outer: usize = y.shape()[..axis].iter().product();
    let yv = y.data();
    let mut dx = vec![T::ZERO; yv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut dot = T::ZERO;
            for j in 0..len {
                dot = dot + g[idx(j)] * yv[idx(j)];
            }
            for j in 0..len {
                dx[idx(j)] = yv[idx(j)] * (g[idx(j)] - dot);
            }
        }
    }
    acc_grad(bufs, x_node, dx);
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    x: &Arg<T>,
    gamma: &Arg<T>,
    beta: &Arg<T>,
    means: &[T],
    rstds: &[T],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, c, h, w) = x.val.dims4().expect("saved 4-D");
    let hw = h * w;
    let xv = x.val.data();
    let gv = gamma.val.data();
    let inv_c = T::from_f64(1.0 / c as f64);

    if x.node.is_some() {
        let mut dx = vec![T::ZERO; xv.len()];
        for ni in 0..n {
            for p in 0..hw {
                let at = |ci: usize| (ni * c + ci) * hw + p;
                let mean = means[ni * hw + p];
                let rstd = rstds[ni * hw + p];
                let mut m1 = T::ZERO;
                let mut m2 = T::ZERO;
                for ci in 0..c {
                    let xhat = (xv[at(ci)] - mean) * rstd;
                    let dy = g[at(ci)] * gv[ci];
                    m1 = m1 + dy;
                    m2 = m2 + dy * xhat;
                }
                m1 = m1 * inv_c;
                m2 = m2 * inv_c;
                for ci in 0..c {
                    let xhat = (xv[at(ci)] - mean) * rstd;
                    let dy = g[at(ci)] * gv[ci];
                    dx[at(ci)] = rstd * (dy - m1 - xhat * m2);
                }
            }
        }
        acc_grad(bufs, x.node, dx);
    }
    if gamma.node.is_some() {
        let mut dg = vec![T::ZERO; c];
        for ni in 0..n {
            for p in 0..hw {
                let mean = means[ni * hw + p];
                let rstd = rstds[ni * hw + p];
                for (ci, slot) in dg.iter_mut().enumerate() {
                    let at = (ni * c + ci) * hw + p;
                    *slot = *slot + g[at] * (xv[at] - mean) * rstd;
                }
            }
        }
        acc_grad(bufs, gamma.node, dg);
    }
    if beta.node.is_some() {
        let mut db = vec![T::ZERO; c];
        for ni in 0..n {
            for p in 0..hw {
                for (ci, slot) in db.iter_mut().enumerate() {
                    *slot = *slot + g[(ni * c + ci) * hw + p];
                }
            }
        }
        acc_grad(bufs, beta.node, db);
    }
}

pub(crate) fn gelu_backward<T: Scalar>(x: &Arg<T>, g: &[T], bufs: &mut [Option<Vec<T>>]) {
    let dx = x
        .val
        .data()
        .iter()
        .zip(g)
        .map(|(&v, &gv)| {
            let xf = v.to_f64();
            let u = GELU_S * (xf + GELU_C * xf * xf * xf);
            let t = fmath::tanh(u);
            let du = GELU_S * (1.0 + 3.0 * GELU_C * xf * xf);
            let d = 0.5 * (1.0 + t) + 0.5 * xf * (1.0 - t * t) * du;
            T::from_f64(d) * gv
        })
        .collect();
    acc_grad(bufs, x.node, dx);
}

pub(crate) fn softplus_backward<T: Scalar>(x: &Arg<T>, g: &[T], bufs: &mut [Option<Vec<T>>]) {
    let dx = x
        .val
        .data()
        .iter()
        .zip(g)
        .map(|(&v, &gv)| T::from_f64(fmath::sigmoid(v.to_f64())) * gv)
        .collect();
    acc_grad(bufs, x.node, dx);
}

pub(crate) fn sigmoid_backward<T: Scalar>(x: &Arg<T>, g: &[T], bufs: &mut [Option<Vec<T>>]) {
    let dx = x
        .val
        .data()
        .iter()
        .zip(g)
        .map(|(&v, &gv)| {
            let s = fmath::sigmoid(v.to_f64());
            T::from_f64(s * (1.0 - s)) * gv
        })
        .collect();
    acc_grad(bufs, x.node, dx);
}

pub(crate) fn gauss_cdf_backward<T: Scalar>(x: &Arg<T>, g: &[T], bufs: &mut [Option<Vec<T>>]) {
    let dx = x
        .val
        .data()
        .iter()
        .zip(g)
        .map(|(&v, &gv)| T::from_f64(fmath::gauss_pdf(v.to_f64())) * gv)
        .collect();
    acc_grad(bufs, x.node, dx);
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};

    #[test]
    fn softmax_constant_row() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 5], vec![0.3; 5]).unwrap();
        let y = g.softmax(&x, 1).unwrap();
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_analytic_pair() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![2], vec![0.0, 3.0f64.ln()]).unwrap();
        let y = g.softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    /// 64-bit exp/sum reference evaluation.
    #[test]
    fn softmax_matches_reference() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let x = Tensor::from_vec(vec![8], data.clone()).unwrap();
        let g = Graph::<f64>::inference();
        let y = g.softmax(&x, 0).unwrap();
        let exps: Vec<f64> = data.iter().map(|&v| v.exp()).collect();
        let total: f64 = exps.iter().sum();
        for (got, want) in y.data().iter().zip(exps.iter().map(|e| e / total)) {
            assert!((got - want).abs() < 1e-10);
        }
        let sum: f64 = y.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn softmax_rejects_nan() {
        let g = Graph::<f32>::inference();
        let x = Tensor::from_vec(vec![2], vec![0.0, f32::NAN]).unwrap();
        assert!(g.softmax(&x, 0).is_err());
    }

    #[test]
    fn softmax_inner_axis() {
        // Normalizing over the channel axis of NCHW must act per position.
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 2, 1, 2], vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let y = g.softmax(&x, 1).unwrap();
        // position 0 lane: (0.0, 2.0); position 1 lane: (1.0, -1.0)
        let s0 = (0.0f64.exp(), 2.0f64.exp());
        let s1 = (1.0f64.exp(), (-1.0f64).exp());
        assert!((y.data()[0] - s0.0 / (s0.0 + s0.1)).abs() < 1e-12);
        assert!((y.data()[2] - s0.1 / (s0.0 + s0.1)).abs() < 1e-12);
        assert!((y.data()[1] - s1.0 / (s1.0 + s1.1)).abs() < 1e-12);
        assert!((y.data()[3] - s1.1 / (s1.0 + s1.1)).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_lane_is_beta() {
        let g = Graph::<f64>::inference();
        let x = Tensor::from_vec(vec![1, 4, 1, 1], vec![2.5; 4]).unwrap();
        let gamma = Tensor::ones(vec![4]);
        let beta = Tensor::from_vec(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = g.layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
        for (got, want) in y.data().iter().zip(beta.data()) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_gamma_zero_gives_beta() {
        let g = Graph::<f32>::inference();
        let x = Tensor::from_vec(vec![1, 3, 2, 2], (0..12).map(|i| i as f32).collect()).unwrap();
        let gamma = Tensor::zeros(vec![3]);
        let beta = Tensor::from_vec(vec![3], vec![1.0, -2.0, 5.0]).unwrap();
        let y = g.layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
        for ci in 0..3 {
            for p in 0..4 {
                assert_eq!(y.data()[ci * 4 + p], beta.data()[ci]);
            }
        }
    }

    /// Direct mean/variance oracle with unit affine.
    #[test]
    fn layer_norm_matches_moment_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (c, hw) = (6usize, 4usize);
        let data: Vec<f64> = (0..c * hw).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(vec![1, c, 2, 2], data.clone()).unwrap();
        let g = Graph::<f64>::inference();
        let y = g
            .layer_norm(&x, &Tensor::ones(vec![c]), &Tensor::zeros(vec![c]), 1e-6)
            .unwrap();
        for p in 0..hw {
            let lane: Vec<f64> = (0..c).map(|ci| data[ci * hw + p]).collect();
            let mean: f64 = lane.iter().sum::<f64>() / c as f64;
            let var: f64 = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let mut out_mean = 0.0;
            let mut out_var = 0.0;
            for ci in 0..c {
                let o = y.data()[ci * hw + p];
                out_mean += o / c as f64;
                let want = (lane[ci] - mean) / (var + 1e-6).sqrt();
                assert!((o - want).abs() < 1e-9);
                out_var += o * o / c as f64;
            }
            assert!(out_mean.abs() < 1e-5, "normalized mean ~ 0");
            assert!((out_var - 1.0).abs() < 1e-4, "normalized variance ~ 1");
        }
    }
}

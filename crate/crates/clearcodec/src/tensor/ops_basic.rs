//! Elementwise, scalar-broadcast and reduction kernels.

use super::graph::{acc_grad, Arg, Graph, Op};
use super::{shape_str, Scalar, Tensor};
use crate::error::{CodecError, Result};
use crate::fmath;

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CodecError::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let tracked = a.requires_grad() || b.requires_grad();
        Ok(self.push(Op::Add(Arg::of(a), Arg::of(b)), a.shape().to_vec(), data, tracked))
    }

    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let tracked = a.requires_grad() || b.requires_grad();
        Ok(self.push(Op::Sub(Arg::of(a), Arg::of(b)), a.shape().to_vec(), data, tracked))
    }

    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", a, b)?;
        self.add_macs(a.numel() as u64);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let tracked = a.requires_grad() || b.requires_grad();
        Ok(self.push(Op::Mul(Arg::of(a), Arg::of(b)), a.shape().to_vec(), data, tracked))
    }

    pub fn div(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", a, b)?;
        self.add_macs(a.numel() as u64);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
        let tracked = a.requires_grad() || b.requires_grad();
        Ok(self.push(Op::Div(Arg::of(a), Arg::of(b)), a.shape().to_vec(), data, tracked))
    }

    pub fn neg(&self, a: &Tensor<T>) -> Tensor<T> {
        let data = a.data().iter().map(|&x| -x).collect();
        self.push(Op::Neg(Arg::of(a)), a.shape().to_vec(), data, a.requires_grad())
    }

    pub fn abs(&self, a: &Tensor<T>) -> Tensor<T> {
        let data = a.data().iter().map(|&x| x.abs()).collect();
        self.push(Op::Abs(Arg::of(a)), a.shape().to_vec(), data, a.requires_grad())
    }

    /// Elementwise reciprocal.
    pub fn recip(&self, a: &Tensor<T>) -> Tensor<T> {
        let data = a.data().iter().map(|&x| T::ONE / x).collect();
        self.push(Op::Recip(Arg::of(a)), a.shape().to_vec(), data, a.requires_grad())
    }

    pub fn add_scalar(&self, a: &Tensor<T>, s: T) -> Tensor<T> {
        let data = a.data().iter().map(|&x| x + s).collect();
        self.push(Op::AddScalar(Arg::of(a)), a.shape().to_vec(), data, a.requires_grad())
    }

    pub fn mul_scalar(&self, a: &Tensor<T>, s: T) -> Tensor<T> {
        let data = a.data().iter().map(|&x| x * s).collect();
        self.push(Op::MulScalar(Arg::of(a), s), a.shape().to_vec(), data, a.requires_grad())
    }

    /// max(x, c); gradient passes where x > c.
    pub fn clamp_min(&self, a: &Tensor<T>, c: T) -> Tensor<T> {
        let data = a.data().iter().map(|&x| x.maximum(c)).collect();
        self.push(Op::ClampMin(Arg::of(a), c), a.shape().to_vec(), data, a.requires_grad())
    }

    /// min(x, c); gradient passes where x < c.
    pub fn clamp_max(&self, a: &Tensor<T>, c: T) -> Tensor<T> {
        let data = a.data().iter().map(|&x| x.minimum(c)).collect();
        self.push(Op::ClampMax(Arg::of(a), c), a.shape().to_vec(), data, a.requires_grad())
    }

    /// Multiply NCHW tensor by a per-channel vector of length C.
    pub fn mul_channel(&self, x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if v.shape() != [c] {
            return Err(CodecError::shape("mul_channel", format!("[{c}]"), shape_str(v.shape())));
        }
        self.add_macs(x.numel() as u64);
        let hw = h * w;
        let xv = x.data();
        let vv = v.data();
        let mut data = Vec::with_capacity(x.numel());
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let s = vv[ci];
                data.extend(xv[base..base + hw].iter().map(|&e| e * s));
            }
        }
        let tracked = x.requires_grad() || v.requires_grad();
        Ok(self.push(
            Op::MulChannel {
                x: Arg::of(x),
                v: Arg::of(v),
            },
            x.shape().to_vec(),
            data,
            tracked,
        ))
    }

    /// Expand a per-channel vector of length C to an NCHW tensor.
    pub fn broadcast_channel(&self, v: &Tensor<T>, shape: [usize; 4]) -> Result<Tensor<T>> {
        let [n, c, h, w] = shape;
        if v.shape() != [c] {
            return Err(CodecError::shape(
                "broadcast_channel",
                format!("[{c}]"),
                shape_str(v.shape()),
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c * hw);
        for _ in 0..n {
            for &s in v.data() {
                data.extend(std::iter::repeat(s).take(hw));
            }
        }
        Ok(self.push(
            Op::BroadcastChannel { v: Arg::of(v) },
            shape.to_vec(),
            data,
            v.requires_grad(),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&self, a: &Tensor<T>) -> Tensor<T> {
        let mut s = T::ZERO;
        for &v in a.data() {
            s = s + v;
        }
        self.push(Op::SumAll(Arg::of(a)), vec![1], vec![s], a.requires_grad())
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean_all(&self, a: &Tensor<T>) -> Tensor<T> {
        let mut s = T::ZERO;
        for &v in a.data() {
            s = s + v;
        }
        let m = s / T::from_f64(a.numel() as f64);
        self.push(Op::MeanAll(Arg::of(a)), vec![1], vec![m], a.requires_grad())
    }

    /// Natural logarithm, elementwise.
    pub fn ln(&self, a: &Tensor<T>) -> Tensor<T> {
        let data = a
            .data()
            .iter()
            .map(|&x| T::from_f64(fmath::ln(x.to_f64())))
            .collect();
        self.push(Op::Ln(Arg::of(a)), a.shape().to_vec(), data, a.requires_grad())
    }

    /// Round half away from zero; forward rounds, backward passes the
    /// gradient through unchanged (straight-through estimator).
    pub fn round_ste(&self, a: &Tensor<T>) -> Tensor<T> {
        let data = a.data().iter().map(|&x| x.round_ties_away()).collect();
        self.push(Op::RoundSte(Arg::of(a)), a.shape().to_vec(), data, a.requires_grad())
    }
}

pub(crate) fn mul_channel_backward<T: Scalar>(
    x: &Arg<T>,
    v: &Arg<T>,
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, c, h, w) = x.val.dims4().expect("mul_channel saved a 4-D tensor");
    let hw = h * w;
    if x.node.is_some() {
        let vv = v.val.data();
        let mut dx = Vec::with_capacity(g.len());
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let s = vv[ci];
                dx.extend(g[base..base + hw].iter().map(|&e| e * s));
            }
        }
        acc_grad(bufs, x.node, dx);
    }
    if v.node.is_some() {
        let xv = x.val.data();
        let mut dv = vec![T::ZERO; c];
        for ni in 0..n {
            for (ci, slot) in dv.iter_mut().enumerate() {
                let base = (ni * c + ci) * hw;
                for i in 0..hw {
                    *slot = *slot + g[base + i] * xv[base + i];
                }
            }
        }
        acc_grad(bufs, v.node, dv);
    }
}

pub(crate) fn broadcast_channel_backward<T: Scalar>(
    v: &Arg<T>,
    out_shape: &[usize],
    g: &[T],
    bufs: &mut [Option<Vec<T>>],
) {
    let (n, c, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
    let hw = h * w;
    let mut dv = vec![T::ZERO; c];
    for ni in 0..n {
        for (ci, slot) in dv.iter_mut().enumerate() {
            let base = (ni * c + ci) * hw;
            for i in 0..hw {
                *slot = *slot + g[base + i];
            }
        }
    }
    acc_grad(bufs, v.node, dv);
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::<f64>::recording();
        let x = g.leaf(&Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap());
        let loss = g.sum_all(&x);
        let grads = g.backward(&loss).unwrap();
        let gx = grads.get(&x).unwrap();
        assert_eq!(gx.shape(), &[2, 3]);
        assert!(gx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identity_passes_gradient_through() {
        let g = Graph::<f64>::recording();
        let x = g.leaf(&Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.reshape(&x, vec![2, 2]).unwrap();
        let w = Tensor::from_vec(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let loss = g.sum_all(&g.mul(&y, &w).unwrap());
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), w.data());
    }

    #[test]
    fn tape_is_single_use() {
        let g = Graph::<f32>::recording();
        let x = g.leaf(&Tensor::scalar(2.0));
        let loss = g.mul(&x, &x).unwrap();
        g.backward(&loss).unwrap();
        let err = g.backward(&loss).unwrap_err();
        assert!(format!("{err}").contains("single-use"));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::<f32>::recording();
        let x = g.leaf(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let y = g.mul(&x, &x).unwrap();
        assert!(g.backward(&y).is_err());
    }

    #[test]
    fn untracked_inputs_get_no_nodes() {
        let g = Graph::<f32>::recording();
        let a = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap();
        let c = g.add(&a, &b).unwrap();
        assert!(!c.requires_grad());
    }

    #[test]
    fn inference_graph_registers_no_leaves() {
        let g = Graph::<f32>::inference();
        let x = g.leaf(&Tensor::scalar(1.0));
        assert!(!x.requires_grad());
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = x*x -> dx = 2x
        let g = Graph::<f64>::recording();
        let x = g.leaf(&Tensor::scalar(3.0));
        let loss = g.mul(&x, &x).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().item(), 6.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
            let x = Tensor::from_vec(
                vec![2, 8, 16, 16],
                (0..2 * 8 * 16 * 16).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let k = Tensor::from_vec(
                vec![8, 8, 3, 3],
                (0..8 * 8 * 9).map(|_| rng.random_range(-0.2f32..0.2)).collect(),
            )
            .unwrap();
            let g = Graph::<f32>::inference();
            let y = g.conv2d(&x, &k, None, 1, 1, 1).unwrap();
            let s = g.softmax(&y, 1).unwrap();
            g.sum_all(&s).item().to_bits()
        };
        assert_eq!(run(), run());
    }
}

//! Operation tape and reverse-mode differentiation.

use std::cell::{Cell, RefCell};

use super::{Scalar, Tensor};
use crate::error::{CodecError, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

/// A saved operand: the forward value plus its tape node, if tracked.
pub(crate) struct Arg<T: Scalar> {
    pub val: Tensor<T>,
    pub node: Option<NodeId>,
}

impl<T: Scalar> Arg<T> {
    pub fn of(t: &Tensor<T>) -> Self {
        Arg {
            val: t.detach(),
            node: t.node(),
        }
    }
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Arg<T>, Arg<T>),
    Sub(Arg<T>, Arg<T>),
    Mul(Arg<T>, Arg<T>),
    Div(Arg<T>, Arg<T>),
    Neg(Arg<T>),
    Abs(Arg<T>),
    Recip(Arg<T>),
    AddScalar(Arg<T>),
    MulScalar(Arg<T>, T),
    ClampMin(Arg<T>, T),
    ClampMax(Arg<T>, T),
    MulChannel {
        x: Arg<T>,
        v: Arg<T>,
    },
    BroadcastChannel {
        v: Arg<T>,
    },
    Conv2d {
        x: Arg<T>,
        w: Arg<T>,
        b: Option<Arg<T>>,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    PixelShuffle {
        x: Arg<T>,
        r: usize,
    },
    PixelUnshuffle {
        x: Arg<T>,
        r: usize,
    },
    Bmm {
        a: Arg<T>,
        b: Arg<T>,
        ta: bool,
        tb: bool,
    },
    Reshape {
        x: Arg<T>,
    },
    ConcatC {
        parts: Vec<Arg<T>>,
    },
    SliceC {
        x: Arg<T>,
        start: usize,
    },
    CropHw {
        x: Arg<T>,
        oh: usize,
        ow: usize,
    },
    Softmax {
        x_node: Option<NodeId>,
        y: Tensor<T>,
        axis: usize,
    },
    LayerNorm {
        x: Arg<T>,
        gamma: Arg<T>,
        beta: Arg<T>,
        eps: T,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Arg<T>),
    Softplus(Arg<T>),
    Sigmoid(Arg<T>),
    GaussCdf(Arg<T>),
    Ln(Arg<T>),
    RoundSte(Arg<T>),
    SumAll(Arg<T>),
    MeanAll(Arg<T>),
}

pub(crate) struct Node<T: Scalar> {
    pub op: Op<T>,
    pub out_shape: Vec<usize>,
}

struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Execution context for tensor ops.
///
/// `Graph::recording()` tapes every op that touches a tracked tensor so
/// [`Graph::backward`] can differentiate; `Graph::inference()` runs the
/// same kernels without recording. The context also counts
/// multiply–accumulate operations of the conv/matmul/Hadamard kernels
/// (see [`Graph::macs`]).
pub struct Graph<T: Scalar> {
    tape: Option<RefCell<Tape<T>>>,
    macs: Cell<u64>,
}

impl<T: Scalar> Graph<T> {
    pub fn recording() -> Self {
        Graph {
            tape: Some(RefCell::new(Tape {
                nodes: Vec::new(),
                consumed: false,
            })),
            macs: Cell::new(0),
        }
    }

    pub fn inference() -> Self {
        Graph {
            tape: None,
            macs: Cell::new(0),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.tape.is_some()
    }

    /// Multiply–accumulate count of all conv2d, batched-matmul and
    /// elementwise-product kernels executed through this graph.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// Register a differentiable leaf (a trainable parameter).
    ///
    /// Without a recording tape this is a no-op: the returned tensor is
    /// untracked, satisfying the invariant that tensors with
    /// `requires_grad == false` never appear as leaves of any tape.
    pub fn leaf(&self, t: &Tensor<T>) -> Tensor<T> {
        match &self.tape {
            None => t.detach(),
            Some(tape) => {
                let mut inner = tape.borrow_mut();
                let id = NodeId(inner.nodes.len());
                inner.nodes.push(Node {
                    op: Op::Leaf,
                    out_shape: t.shape().to_vec(),
                });
                t.detach().with_node(Some(id))
            }
        }
    }

    /// Record `op` producing `data` with `shape`. `tracked` is true when
    /// any input participates in differentiation.
    pub(crate) fn push(&self, op: Op<T>, shape: Vec<usize>, data: Vec<T>, tracked: bool) -> Tensor<T> {
        let out = Tensor::from_vec(shape.clone(), data).expect("op produced wrong element count");
        match &self.tape {
            Some(tape) if tracked => {
                let mut inner = tape.borrow_mut();
                let id = NodeId(inner.nodes.len());
                inner.nodes.push(Node { op, out_shape: shape });
                out.with_node(Some(id))
            }
            _ => out,
        }
    }

    /// Reverse pass from a scalar loss. Consumes the tape: calling
    /// backward twice on the same graph is an error.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| CodecError::Autodiff("backward on an inference graph".into()))?;
        let mut inner = tape.borrow_mut();
        if inner.consumed {
            return Err(CodecError::Autodiff(
                "tape already consumed; a tape is single-use per backward call".into(),
            ));
        }
        inner.consumed = true;
        if loss.numel() != 1 {
            return Err(CodecError::Autodiff(format!(
                "loss must be a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let root = loss
            .node()
            .ok_or_else(|| CodecError::Autodiff("loss is not tracked by this tape".into()))?;

        let n = inner.nodes.len();
        let mut bufs: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
        bufs.resize_with(n, || None);
        bufs[root.0] = Some(vec![T::ONE]);

        for id in (0..=root.0).rev() {
            if bufs[id].is_none() {
                continue;
            }
            let node = &inner.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue; // keep the buffer: leaves are the result
            }
            let g = bufs[id].take().unwrap();
            backward_step(&node.op, &node.out_shape, &g, &mut bufs);
        }

        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(n);
        for (buf, node) in bufs.into_iter().zip(inner.nodes.iter()) {
            grads.push(match buf {
                Some(b) => Some(Tensor::from_vec(node.out_shape.clone(), b)?),
                None => None,
            });
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `t` (which must be a tracked leaf that
    /// was reachable from the loss).
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        t.node().and_then(|id| self.grads.get(id.0).and_then(|g| g.as_ref()))
    }

    /// Like [`Gradients::get`] but returns zeros for unreachable leaves.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        match self.get(t) {
            Some(g) => g.clone(),
            None => Tensor::zeros(t.shape().to_vec()),
        }
    }
}

pub(crate) fn acc_grad<T: Scalar>(bufs: &mut [Option<Vec<T>>], node: Option<NodeId>, grad: Vec<T>) {
    let Some(id) = node else { return };
    match &mut bufs[id.0] {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e = *e + g;
            }
        }
        slot => *slot = Some(grad),
    }
}

fn backward_step<T: Scalar>(op: &Op<T>, out_shape: &[usize], g: &[T], bufs: &mut [Option<Vec<T>>]) {
    use super::{ops_basic, ops_conv, ops_nn, ops_shape};
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc_grad(bufs, a.node, g.to_vec());
            acc_grad(bufs, b.node, g.to_vec());
        }
        Op::Sub(a, b) => {
            acc_grad(bufs, a.node, g.to_vec());
            acc_grad(bufs, b.node, g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            if a.node.is_some() {
                let da = g.iter().zip(b.val.data()).map(|(&gv, &bv)| gv * bv).collect();
                acc_grad(bufs, a.node, da);
            }
            if b.node.is_some() {
                let db = g.iter().zip(a.val.data()).map(|(&gv, &av)| gv * av).collect();
                acc_grad(bufs, b.node, db);
            }
        }
        Op::Div(a, b) => {
            if a.node.is_some() {
                let da = g.iter().zip(b.val.data()).map(|(&gv, &bv)| gv / bv).collect();
                acc_grad(bufs, a.node, da);
            }
            if b.node.is_some() {
                let db = g
                    .iter()
                    .zip(a.val.data().iter().zip(b.val.data()))
                    .map(|(&gv, (&av, &bv))| -(gv * av) / (bv * bv))
                    .collect();
                acc_grad(bufs, b.node, db);
            }
        }
        Op::Neg(a) => acc_grad(bufs, a.node, g.iter().map(|&v| -v).collect()),
        Op::Abs(a) => {
            let da = g
                .iter()
                .zip(a.val.data())
                .map(|(&gv, &av)| {
                    if av > T::ZERO {
                        gv
                    } else if av < T::ZERO {
                        -gv
                    } else {
                        T::ZERO
                    }
                })
                .collect();
            acc_grad(bufs, a.node, da);
        }
        Op::Recip(a) => {
            let da = g
                .iter()
                .zip(a.val.data())
                .map(|(&gv, &av)| -gv / (av * av))
                .collect();
            acc_grad(bufs, a.node, da);
        }
        Op::AddScalar(a) => acc_grad(bufs, a.node, g.to_vec()),
        Op::MulScalar(a, s) => acc_grad(bufs, a.node, g.iter().map(|&v| v * *s).collect()),
        Op::ClampMin(a, c) => {
            let da = g
                .iter()
                .zip(a.val.data())
                .map(|(&gv, &av)| if av > *c { gv } else { T::ZERO })
                .collect();
            acc_grad(bufs, a.node, da);
        }
        Op::ClampMax(a, c) => {
            let da = g
                .iter()
                .zip(a.val.data())
                .map(|(&gv, &av)| if av < *c { gv } else { T::ZERO })
                .collect();
            acc_grad(bufs, a.node, da);
        }
        Op::MulChannel { x, v } => ops_basic::mul_channel_backward(x, v, g, bufs),
        Op::BroadcastChannel { v } => ops_basic::broadcast_channel_backward(v, out_shape, g, bufs),
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
            groups,
        } => ops_conv::conv2d_backward(x, w, b.as_ref(), *stride, *pad, *groups, out_shape, g, bufs),
        Op::PixelShuffle { x, r } => ops_conv::pixel_shuffle_backward(x, *r, out_shape, g, bufs),
        Op::PixelUnshuffle { x, r } => ops_conv::pixel_unshuffle_backward(x, *r, out_shape, g, bufs),
        Op::Bmm { a, b, ta, tb } => ops_shape::bmm_backward(a, b, *ta, *tb, g, bufs),
        Op::Reshape { x } => acc_grad(bufs, x.node, g.to_vec()),
        Op::ConcatC { parts } => ops_shape::concat_c_backward(parts, out_shape, g, bufs),
        Op::SliceC { x, start } => ops_shape::slice_c_backward(x, *start, out_shape, g, bufs),
        Op::CropHw { x, oh, ow } => ops_shape::crop_hw_backward(x, *oh, *ow, out_shape, g, bufs),
        Op::Softmax { x_node, y, axis } => ops_nn::softmax_backward(*x_node, y, *axis, g, bufs),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            eps: _,
            mean,
            rstd,
        } => ops_nn::layer_norm_backward(x, gamma, beta, mean, rstd, g, bufs),
        Op::Gelu(a) => ops_nn::gelu_backward(a, g, bufs),
        Op::Softplus(a) => ops_nn::softplus_backward(a, g, bufs),
        Op::Sigmoid(a) => ops_nn::sigmoid_backward(a, g, bufs),
        Op::GaussCdf(a) => ops_nn::gauss_cdf_backward(a, g, bufs),
        Op::Ln(a) => {
            let da = g
                .iter()
                .zip(a.val.data())
                .map(|(&gv, &av)| gv / av)
                .collect();
            acc_grad(bufs, a.node, da);
        }
        Op::RoundSte(a) => acc_grad(bufs, a.node, g.to_vec()),
        Op::SumAll(a) => acc_grad(bufs, a.node, vec![g[0]; a.val.numel()]),
        Op::MeanAll(a) => {
            let scale = g[0] / T::from_f64(a.val.numel() as f64);
            acc_grad(bufs, a.node, vec![scale; a.val.numel()]);
        }
    }
}


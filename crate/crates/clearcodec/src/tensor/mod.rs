//! Dense NCHW tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after construction; the payload sits behind an
//! `Arc` so clones and reshapes are cheap. Differentiation is tape-based:
//! a [`Graph`] records every operation whose inputs are tracked, and
//! [`Graph::backward`] replays the tape once (a tape is single-use).
//!
//! All reductions run in a fixed left-to-right order, and parallel kernels
//! only split work across output elements, so forward values are
//! bit-identical across runs and thread counts.

pub mod gradcheck;
pub mod graph;
mod ops_basic;
mod ops_conv;
mod ops_nn;
mod ops_shape;

use std::sync::Arc;

use crate::error::{CodecError, Result};
pub use graph::{Gradients, Graph, NodeId};

/// Element type of tensors: f32 in production, f64 in gradient-check mode
/// (central finite differences are unreliable at 32-bit).
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    /// Round half away from zero (the rounding the quantizer uses).
    fn round_ties_away(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn round_ties_away(self) -> Self {
        f32::round(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn maximum(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn minimum(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn round_ties_away(self) -> Self {
        f64::round(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn maximum(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn minimum(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
}

/// Dense tensor. Shapes are at most 4-D; by convention 4-D means NCHW.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeId>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(CodecError::shape(
                "Tensor::from_vec",
                format!("{numel} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::ONE)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; numel]),
            node: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(vec![1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// True when this tensor participates in gradient computation.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn with_node(mut self, node: Option<NodeId>) -> Self {
        self.node = node;
        self
    }

    /// NCHW extents; errors for non-4-D tensors.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(CodecError::shape(
                "dims4",
                "4-D tensor",
                format!("{:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    /// Elementwise map; the result is untracked.
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
            node: None,
        }
    }

    /// Untracked copy (same data, no tape node).
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Precision conversion (untracked).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect()),
            node: None,
        }
    }

    pub fn iter_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().map(|&v| v.to_f64())
    }

    /// Maximum |a-b| over all elements; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])?;
        }
        if let Some(n) = self.node {
            write!(f, " @node{}", n.0)?;
        }
        Ok(())
    }
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    format!("{shape:?}")
}

#[cfg(test)]
mod tests {
    use super::{Graph, Tensor};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// conv2d output extents follow floor((d + 2p - k)/s) + 1.
        #[test]
        fn conv_shape_algebra(
            n in 1usize..3, ci in 1usize..5, h in 3usize..12, w in 3usize..12,
            co_per in 1usize..4, k in 1usize..4, stride in 1usize..3, pad in 0usize..3,
        ) {
            prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
            let g = Graph::<f32>::inference();
            let x = Tensor::<f32>::zeros(vec![n, ci, h, w]);
            let wt = Tensor::<f32>::zeros(vec![co_per * ci, 1, k, k]);
            let y = g.conv2d(&x, &wt, None, stride, pad, ci).unwrap();
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (w + 2 * pad - k) / stride + 1;
            prop_assert_eq!(y.shape(), &[n, co_per * ci, ho, wo]);
        }

        /// pixel shuffle maps (N,C,H,W) -> (N,C/r^2,rH,rW) and inverts.
        #[test]
        fn shuffle_shape_algebra(
            n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6, r in 1usize..4,
            bits in proptest::collection::vec(-100i32..100, 1..2),
        ) {
            let _ = bits;
            let g = Graph::<f32>::inference();
            let x = Tensor::<f32>::zeros(vec![n, c * r * r, h, w]);
            let up = g.pixel_shuffle(&x, r).unwrap();
            prop_assert_eq!(up.shape(), &[n, c, h * r, w * r]);
            let down = g.pixel_unshuffle(&up, r).unwrap();
            prop_assert_eq!(down.shape(), x.shape());
        }
    }
}

//! Named traversal over parameter structures.

use crate::tensor::{Graph, Scalar, Tensor};

/// A tree of named parameter tensors.
///
/// `map_named` rebuilds the structure by transforming every tensor in a
/// fixed traversal order; everything else (visiting, counting, tracking,
/// checkpointing, optimizer updates) is derived from it.
pub trait ParamGroup<T: Scalar>: Sized {
    fn map_named(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> Self;

    /// Visit every named tensor without rebuilding.
    fn visit(&self, mut f: impl FnMut(&str, &Tensor<T>)) {
        self.map_named("", &mut |name, t| {
            f(name, t);
            t.clone()
        });
    }

    /// Register every tensor as a differentiable leaf of `graph`.
    fn track(&self, graph: &Graph<T>) -> Self {
        self.map_named("", &mut |_, t| graph.leaf(t))
    }

    fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

//! Quantization with learnable per-channel steps.

use crate::error::{CodecError, Result};
use crate::tensor::{Graph, Scalar, Tensor};

/// How rounding enters the computation graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Hard rounding, no gradients (coding path).
    Infer,
    /// Rounding in the forward pass, straight-through gradients.
    TrainSte,
    /// Rounding bypassed entirely. Finite differences cannot see through
    /// the piecewise-constant rounding surface, so gradient checks run on
    /// this surrogate — the exact function the straight-through estimator
    /// differentiates.
    Smooth,
}

/// Effective positive per-channel step: softplus(raw) · multiplier.
pub fn effective_step<T: Scalar>(g: &Graph<T>, q_raw: &Tensor<T>, multiplier: f64) -> Tensor<T> {
    let sp = g.softplus(q_raw);
    let scaled = g.mul_scalar(&sp, T::from_f64(multiplier));
    g.clamp_min(&scaled, T::from_f64(1e-6))
}

/// ŷ = round(y / q) · q with the rounding behavior selected by `mode`.
pub fn quantize<T: Scalar>(
    g: &Graph<T>,
    y: &Tensor<T>,
    q_step: &Tensor<T>,
    mode: QuantMode,
) -> Result<Tensor<T>> {
    if q_step.data().iter().any(|&v| !(v > T::ZERO)) {
        return Err(CodecError::InvalidArgument(
            "quantize: q_step must be strictly positive".into(),
        ));
    }
    match mode {
        QuantMode::Smooth => Ok(y.clone()),
        QuantMode::Infer | QuantMode::TrainSte => {
            let inv = g.recip(q_step);
            let scaled = g.mul_channel(y, &inv)?;
            let rounded = g.round_ste(&scaled);
            g.mul_channel(&rounded, q_step)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn rounding_contract() {
        let g = Graph::<f64>::inference();
        let y = Tensor::from_vec(vec![1, 1, 1, 2], vec![2.4, -2.4]).unwrap();
        let q = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let q_hat = quantize(&g, &y, &q, QuantMode::Infer).unwrap();
        assert_eq!(q_hat.data(), &[2.0, -2.0]);
    }

    #[test]
    fn outputs_divisible_by_step() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let y = Tensor::from_vec(
            vec![1, 3, 4, 4],
            (0..48).map(|_| rng.random_range(-8.0..8.0)).collect(),
        )
        .unwrap();
        let q = Tensor::from_vec(vec![3], vec![0.5, 1.25, 2.0]).unwrap();
        let g = Graph::<f64>::inference();
        let y_hat = quantize(&g, &y, &q, QuantMode::Infer).unwrap();
        for ci in 0..3 {
            for p in 0..16 {
                let v = y_hat.data()[ci * 16 + p];
                let ratio = v / q.data()[ci];
                assert!((ratio - ratio.round()).abs() < 1e-6, "{v} not on grid {}", q.data()[ci]);
            }
        }
    }

    #[test]
    fn nonpositive_step_rejected() {
        let g = Graph::<f32>::inference();
        let y = Tensor::<f32>::zeros(vec![1, 1, 1, 1]);
        let q = Tensor::from_vec(vec![1], vec![0.0f32]).unwrap();
        assert!(quantize(&g, &y, &q, QuantMode::Infer).is_err());
    }

    /// Straight-through: the training-mode gradient w.r.t. y equals the
    /// gradient of the same loss with quantization removed.
    #[test]
    fn straight_through_matches_bypass() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights = Tensor::from_vec(vec![1, 2, 2, 2], w).unwrap();
        let q = Tensor::from_vec(vec![2], vec![0.7, 1.3]).unwrap();

        let run = |mode: QuantMode| {
            let g = Graph::<f64>::recording();
            let y = g.leaf(&Tensor::from_vec(vec![1, 2, 2, 2], data.clone()).unwrap());
            let y_hat = quantize(&g, &y, &q, mode).unwrap();
            let loss = g.sum_all(&g.mul(&y_hat, &weights).unwrap());
            let grads = g.backward(&loss).unwrap();
            grads.get(&y).unwrap().data().to_vec()
        };
        let ste = run(QuantMode::TrainSte);
        let bypass = run(QuantMode::Smooth);
        for (a, b) in ste.iter().zip(&bypass) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

//! Central finite-difference verification of analytic gradients.
//!
//! Runs in f64: finite differences are unreliable at 32-bit. The harness
//! is independent of the backward pass it checks — it only re-evaluates
//! the forward function at perturbed points.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor};
use crate::error::Result;

/// One compared gradient entry.
#[derive(Debug, Clone)]
pub struct GradSample {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference check.
#[derive(Debug)]
pub struct GradReport {
    pub samples: Vec<GradSample>,
}

impl GradReport {
    /// Fraction of sampled entries with relative error below `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.samples.is_empty() {
            return 1.0;
        }
        let ok = self.samples.iter().filter(|s| s.rel_err < tol).count();
        ok as f64 / self.samples.len() as f64
    }

    pub fn max_rel_err(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }

    pub fn assert_all_within(&self, tol: f64) {
        for s in &self.samples {
            assert!(
                s.rel_err < tol,
                "gradient mismatch at input {} index {}: analytic {} vs fd {} (rel {})",
                s.input,
                s.index,
                s.analytic,
                s.finite_diff,
                s.rel_err
            );
        }
    }
}

fn perturbed(t: &Tensor<f64>, index: usize, delta: f64) -> Tensor<f64> {
    let mut data = t.data().to_vec();
    data[index] += delta;
    Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-7 {
        0.0 // both effectively zero
    } else {
        (a - b).abs() / denom
    }
}

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` is evaluated once on a recording graph with every input registered
/// as a leaf, then re-evaluated at `x ± h` on inference graphs for each
/// sampled element. `samples_per_input == 0` checks every element.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    samples_per_input: usize,
    h: f64,
    seed: u64,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let graph = Graph::recording();
    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| graph.leaf(t)).collect();
    let loss = f(&graph, &tracked)?;
    let grads = graph.backward(&loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tracked[i]);
        let indices: Vec<usize> = if samples_per_input == 0 || samples_per_input >= input.numel() {
            (0..input.numel()).collect()
        } else {
            (0..samples_per_input)
                .map(|_| rng.random_range(0..input.numel()))
                .collect()
        };
        for j in indices {
            let eval = |delta: f64| -> Result<f64> {
                let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
                probe[i] = perturbed(input, j, delta);
                let g = Graph::inference();
                Ok(f(&g, &probe)?.item())
            };
            let fp = eval(h)?;
            let fm = eval(-h)?;
            let fd = (fp - fm) / (2.0 * h);
            let ana = analytic.data()[j];
            samples.push(GradSample {
                input: i,
                index: j,
                analytic: ana,
                finite_diff: fd,
                rel_err: rel_err(ana, fd),
            });
        }
    }
    Ok(GradReport { samples })
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};
    use super::check;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Weighted sum so the upstream gradient is non-uniform.
    fn weighted_loss(g: &Graph<f64>, y: &Tensor<f64>, seed: u64) -> Tensor<f64> {
        let w = rand_t(y.shape(), seed, -1.0, 1.0);
        g.sum_all(&g.mul(y, &w).unwrap())
    }

    const TOL: f64 = 1e-5; // 64-bit primitive tolerance

    #[test]
    fn elementwise_primitives() {
        let a = rand_t(&[2, 3], 1, -1.0, 1.0);
        let b = rand_t(&[2, 3], 2, 0.5, 1.5); // positive: safe for div
        check(&[a.clone(), b.clone()], 0, 1e-4, 7, |g, t| {
            let s = g.add(&t[0], &t[1])?;
            let d = g.sub(&s, &t[1])?;
            let m = g.mul(&d, &t[1])?;
            let q = g.div(&m, &t[1])?;
            Ok(weighted_loss(g, &q, 100))
        })
        .unwrap()
        .assert_all_within(TOL);

        check(&[b.clone()], 0, 1e-4, 8, |g, t| {
            let n = g.neg(&t[0]);
            let r = g.recip(&t[0]);
            let l = g.ln(&t[0]);
            let sum = g.add(&g.add(&n, &r)?, &l)?;
            Ok(weighted_loss(g, &sum, 101))
        })
        .unwrap()
        .assert_all_within(TOL);

        // abs away from the kink at 0
        let c = rand_t(&[6], 3, 0.2, 1.0);
        check(&[c], 0, 1e-4, 9, |g, t| {
            let x = g.mul_scalar(&t[0], -1.0);
            Ok(weighted_loss(g, &g.abs(&x), 102))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn scalar_and_clamp_primitives() {
        let a = rand_t(&[8], 4, -1.0, 1.0);
        check(&[a], 0, 1e-4, 10, |g, t| {
            let y = g.add_scalar(&g.mul_scalar(&t[0], 1.7), -0.3);
            // clamp bounds far from data so no sample sits at a kink
            let y = g.clamp_min(&y, -10.0);
            let y = g.clamp_max(&y, 10.0);
            Ok(weighted_loss(g, &y, 103))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn channel_broadcast_primitives() {
        let x = rand_t(&[2, 3, 2, 2], 5, -1.0, 1.0);
        let v = rand_t(&[3], 6, 0.5, 1.5);
        check(&[x, v], 0, 1e-4, 11, |g, t| {
            let y = g.mul_channel(&t[0], &t[1])?;
            let b = g.broadcast_channel(&t[1], [2, 3, 2, 2])?;
            Ok(weighted_loss(g, &g.add(&y, &b)?, 104))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn conv2d_gradients() {
        // stride 1, pad 1, dense
        let x = rand_t(&[2, 3, 5, 4], 7, -1.0, 1.0);
        let w = rand_t(&[4, 3, 3, 3], 8, -0.5, 0.5);
        let b = rand_t(&[4], 9, -0.2, 0.2);
        check(&[x, w, b], 0, 1e-4, 12, |g, t| {
            let y = g.conv2d(&t[0], &t[1], Some(&t[2]), 1, 1, 1)?;
            Ok(weighted_loss(g, &y, 105))
        })
        .unwrap()
        .assert_all_within(TOL);

        // stride 2, pad 0, grouped
        let x = rand_t(&[1, 4, 6, 6], 17, -1.0, 1.0);
        let w = rand_t(&[6, 2, 2, 2], 18, -0.5, 0.5);
        check(&[x, w], 0, 1e-4, 13, |g, t| {
            let y = g.conv2d(&t[0], &t[1], None, 2, 0, 2)?;
            Ok(weighted_loss(g, &y, 106))
        })
        .unwrap()
        .assert_all_within(TOL);

        // depthwise 1xK and Kx1
        let x = rand_t(&[1, 3, 4, 5], 27, -1.0, 1.0);
        let wv = rand_t(&[3, 1, 5, 1], 28, -0.5, 0.5);
        let wh = rand_t(&[3, 1, 1, 5], 29, -0.5, 0.5);
        check(&[x, wv, wh], 0, 1e-4, 14, |g, t| {
            let y = g.conv2d(&t[0], &t[1], None, 1, 2, 3)?;
            let y = g.conv2d(&y, &t[2], None, 1, 2, 3)?;
            Ok(weighted_loss(g, &y, 107))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn shuffle_and_shape_gradients() {
        let x = rand_t(&[1, 8, 2, 2], 31, -1.0, 1.0);
        check(&[x], 0, 1e-4, 15, |g, t| {
            let up = g.pixel_shuffle(&t[0], 2)?;
            let down = g.pixel_unshuffle(&up, 2)?;
            let r = g.reshape(&down, vec![1, 8, 4, 1])?;
            Ok(weighted_loss(g, &r, 108))
        })
        .unwrap()
        .assert_all_within(TOL);

        let a = rand_t(&[1, 2, 3, 3], 32, -1.0, 1.0);
        let b = rand_t(&[1, 3, 3, 3], 33, -1.0, 1.0);
        check(&[a, b], 0, 1e-4, 16, |g, t| {
            let cat = g.concat_c(&[&t[0], &t[1]])?;
            let s = g.slice_c(&cat, 1, 3)?;
            let c = g.crop_hw(&s, 2, 2)?;
            Ok(weighted_loss(g, &c, 109))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn bmm_gradients_all_transpose_modes() {
        for (i, (ta, tb)) in [(false, false), (true, false), (false, true), (true, true)]
            .into_iter()
            .enumerate()
        {
            let ashape = if ta { [2, 4, 3] } else { [2, 3, 4] };
            let bshape = if tb { [2, 5, 4] } else { [2, 4, 5] };
            let a = rand_t(&ashape, 40 + i as u64, -1.0, 1.0);
            let b = rand_t(&bshape, 50 + i as u64, -1.0, 1.0);
            check(&[a, b], 0, 1e-4, 17 + i as u64, |g, t| {
                let y = g.bmm(&t[0], &t[1], ta, tb)?;
                Ok(weighted_loss(g, &y, 110 + i as u64))
            })
            .unwrap()
            .assert_all_within(TOL);
        }
    }

    #[test]
    fn nonlinearity_gradients() {
        let x = rand_t(&[3, 4], 60, -2.0, 2.0);
        check(&[x], 0, 1e-4, 20, |g, t| {
            let a = g.gelu(&t[0]);
            let b = g.softplus(&t[0]);
            let c = g.sigmoid(&t[0]);
            let d = g.gauss_cdf(&t[0]);
            let s = g.add(&g.add(&a, &b)?, &g.add(&c, &d)?)?;
            Ok(weighted_loss(g, &s, 113))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn softmax_and_layer_norm_gradients() {
        let x = rand_t(&[2, 5], 61, -2.0, 2.0);
        check(&[x], 0, 1e-4, 21, |g, t| {
            let y = g.softmax(&t[0], 1)?;
            Ok(weighted_loss(g, &y, 114))
        })
        .unwrap()
        .assert_all_within(TOL);

        let x = rand_t(&[2, 4, 2, 3], 62, -1.0, 1.0);
        let gamma = rand_t(&[4], 63, 0.5, 1.5);
        let beta = rand_t(&[4], 64, -0.5, 0.5);
        check(&[x, gamma, beta], 0, 1e-4, 22, |g, t| {
            let y = g.layer_norm(&t[0], &t[1], &t[2], 1e-6)?;
            Ok(weighted_loss(g, &y, 115))
        })
        .unwrap()
        .assert_all_within(TOL);
    }

    #[test]
    fn reductions_and_ste() {
        let x = rand_t(&[3, 3], 70, -1.0, 1.0);
        check(&[x.clone()], 0, 1e-4, 23, |g, t| {
            let m = g.mean_all(&t[0]);
            let s = g.sum_all(&t[0]);
            g.add(&g.mul_scalar(&m, 2.0), &s)
        })
        .unwrap()
        .assert_all_within(TOL);

        // Straight-through rounding: analytic gradient equals the gradient
        // with rounding removed (not the local finite difference, which is
        // zero almost everywhere).
        let g = Graph::<f64>::recording();
        let xt = g.leaf(&x);
        let w = rand_t(&[3, 3], 71, -1.0, 1.0);
        let loss = g.sum_all(&g.mul(&g.round_ste(&xt), &w).unwrap());
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&xt).unwrap().data(), w.data());
    }
}

//! Checkerboard partition of latent positions into anchors and
//! non-anchors. Anchors are coded from hyperprior parameters alone;
//! non-anchors additionally condition on decoded anchors, so the two-pass
//! order is causally decodable.

use crate::tensor::{Scalar, Tensor};

/// True for anchor positions: (h + w) even.
pub fn is_anchor(h: usize, w: usize) -> bool {
    (h + w) % 2 == 0
}

/// NCHW mask tensor, 1.0 where `anchors` matches the position class.
pub fn checkerboard_mask<T: Scalar>(n: usize, c: usize, h: usize, w: usize, anchors: bool) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * c * h * w);
    for _ in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                let v = if is_anchor(y, x) == anchors { T::ONE } else { T::ZERO };
                data.push(v);
            }
        }
    }
    Tensor::from_vec(vec![n, c, h, w], data).expect("sized")
}

/// Number of anchor positions in an h×w grid (= ceil(hw/2)).
pub fn anchor_count(h: usize, w: usize) -> usize {
    (h * w).div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_partition_positions() {
        for (h, w) in [(4, 4), (3, 5), (1, 1), (7, 2)] {
            let a = checkerboard_mask::<f32>(1, 1, h, w, true);
            let na = checkerboard_mask::<f32>(1, 1, h, w, false);
            let mut anchors = 0usize;
            for (x, y) in a.data().iter().zip(na.data()) {
                assert_eq!(x + y, 1.0, "complementary");
                anchors += *x as usize;
            }
            assert_eq!(anchors, anchor_count(h, w));
            // Exactly half, within one on odd extents.
            let diff = (2 * anchors) as isize - (h * w) as isize;
            assert!(diff.abs() <= 1);
        }
    }
}

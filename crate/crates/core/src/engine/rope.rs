// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rotary position encoding driven by explicit position indices.
//!
//! Channels are rotated in adjacent pairs `(2i, 2i+1)` within each head.
//! Pair `i` turns by `position * base^(-2i / head_dim)` radians. Because the
//! position is an argument rather than the sequence offset, callers can give
//! several tokens the same index, which is how unified visual positions are
//! realised.

use crate::error::{Error, Result};

/// Rotation angle of channel pair `pair` at `position`.
pub fn pair_angle(position: usize, pair: usize, head_dim: usize, base: f64) -> f64 {
    let inv_freq = base.powf(-((2 * pair) as f64) / head_dim as f64);
    position as f64 * inv_freq
}

/// Rotate one head-sized vector in place.
pub fn rotate_head(vec: &mut [f64], position: usize, base: f64) -> Result<()> {
    let head_dim = vec.len();
    if head_dim % 2 != 0 {
        return Err(Error::Config(format!(
            "rotary encoding needs an even head_dim, got {head_dim}"
        )));
    }
    if position == 0 {
        return Ok(());
    }
    for (pair, chunk) in vec.chunks_exact_mut(2).enumerate() {
        let (sin, cos) = pair_angle(position, pair, head_dim, base).sin_cos();
        let (x0, x1) = (chunk[0], chunk[1]);
        chunk[0] = x0 * cos - x1 * sin;
        chunk[1] = x0 * sin + x1 * cos;
    }
    Ok(())
}

/// Apply the rotation to every head of a `n_heads * head_dim` vector.
pub fn rope_positions(vec: &[f64], head_dim: usize, position: usize, base: f64) -> Result<Vec<f64>> {
    if head_dim == 0 || head_dim % 2 != 0 {
        return Err(Error::Config(format!(
            "rotary encoding needs an even head_dim, got {head_dim}"
        )));
    }
    if vec.len() % head_dim != 0 {
        return Err(Error::Config(format!(
            "vector length {} is not a multiple of head_dim {head_dim}",
            vec.len()
        )));
    }
    let mut out = vec.to_vec();
    for head in out.chunks_exact_mut(head_dim) {
        rotate_head(head, position, base)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn position_zero_is_identity() {
        let v = vec![0.3, -1.2, 4.0, 0.5, 2.0, -0.1, 0.0, 7.0];
        assert_eq!(rope_positions(&v, 4, 0, 10_000.0).unwrap(), v);
    }

    #[test]
    fn first_pair_matches_plane_rotation() {
        // Pair 0 has inverse frequency 1, so the angle is the position itself.
        let p = 3;
        let theta = p as f64;
        let out = rope_positions(&[1.0, 0.0], 2, p, 10_000.0).unwrap();
        assert!((out[0] - theta.cos()).abs() < 1e-15);
        assert!((out[1] - theta.sin()).abs() < 1e-15);
    }

    #[test]
    fn higher_pairs_use_slower_frequencies() {
        let base: f64 = 100.0;
        let out = rope_positions(&[0.0, 0.0, 1.0, 0.0], 4, 5, base).unwrap();
        let theta = 5.0 * base.powf(-0.5);
        assert!((out[2] - theta.cos()).abs() < 1e-15);
        assert!((out[3] - theta.sin()).abs() < 1e-15);
        assert_eq!(&out[..2], &[0.0, 0.0]);
    }

    #[test]
    fn odd_head_dim_is_config_error() {
        assert!(matches!(
            rope_positions(&[1.0, 2.0, 3.0], 3, 1, 10_000.0),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(
            v in prop::collection::vec(-3.0f64..3.0, 8),
            pos in 0usize..5000,
        ) {
            let out = rope_positions(&v, 4, pos, 10_000.0).unwrap();
            for (a, b) in v.chunks(4).zip(out.chunks(4)) {
                prop_assert!((norm(a) - norm(b)).abs() < 1e-9);
            }
        }

        #[test]
        fn dot_product_depends_on_offset_only(
            q in prop::collection::vec(-1.0f64..1.0, 4),
            k in prop::collection::vec(-1.0f64..1.0, 4),
            m in 0usize..200, n in 0usize..200, shift in 0usize..200,
        ) {
            let d = |a: usize, b: usize| {
                let qa = rope_positions(&q, 4, a, 10_000.0).unwrap();
                let kb = rope_positions(&k, 4, b, 10_000.0).unwrap();
                qa.iter().zip(&kb).map(|(x, y)| x * y).sum::<f64>()
            };
            prop_assert!((d(m, n) - d(m + shift, n + shift)).abs() < 1e-9);
        }
    }
}

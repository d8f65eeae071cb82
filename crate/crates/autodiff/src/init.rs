//! Seeded weight initializers.
//!
//! All randomness in the project flows from [`Rng`], ChaCha with 8 rounds
//! seeded from a `u64` through `SeedableRng::seed_from_u64`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::float::Float;
use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-l, l]` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Float>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64c(rng.random_range(-limit..=limit)))
}

/// Fans of a kernel laid out as `[..receptive, in, out]`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], shape[0]),
        n => {
            let receptive: usize = shape[..n - 2].iter().product();
            (receptive * shape[n - 2], receptive * shape[n - 1])
        }
    }
}

/// Matrix of shape `[rows, cols]` whose rows (when `rows <= cols`) or
/// columns (otherwise) are orthonormal.
pub fn orthogonal<T: Float>(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<T> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // columns of a tall x short Gaussian matrix, Gram-Schmidt orthonormalized
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..short {
        for i in 0..j {
            let dot: f64 = q[j].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(j);
            for (a, b) in tail[0].iter_mut().zip(&head[i]) {
                *a -= dot * b;
            }
        }
        let norm = q[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in q[j].iter_mut() {
            *a /= norm;
        }
    }
    Tensor::from_fn(&[rows, cols], |idx| {
        let (r, c) = (idx / cols, idx % cols);
        let v = if rows >= cols { q[c][r] } else { q[r][c] };
        T::from_f64c(v)
    })
}

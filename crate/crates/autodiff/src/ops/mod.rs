//! Differentiable primitives, all implemented as methods on [`Graph`].
//!
//! Layout conventions: image-like values are `[batch, height, width, channels]`
//! (for audio, height is the frequency axis and width is time); sequences are
//! `[batch, steps, features]`; dense layers act on the last axis.
//!
//! [`Graph`]: crate::Graph

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod pool;
mod shape;

pub use conv::Padding;
pub use loss::PROB_EPS;
pub use norm::BatchStats;
pub use pool::adaptive_bounds;

use crate::error::{Error, Result};
use crate::tensor::strides_of;

/// Output shape of a two-sided broadcast between equal-rank shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, "rank", a, b));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(axis, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("axis {axis}"), a, b)),
        })
        .collect()
}

/// Strides of `shape` when walked over `out` (0 on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    strides_of(shape)
        .into_iter()
        .zip(shape.iter().zip(out))
        .map(|(s, (&d, &o))| if d == 1 && o != 1 { 0 } else { s })
        .collect()
}

/// Visits every index of `shape` in row-major order, passing the flat
/// index together with the matching offsets under strides `sa` and `sb`.
pub(crate) fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    if shape.contains(&0) {
        return;
    }
    let last = shape[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    loop {
        for j in 0..last {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += last;
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_visits_broadcast_offsets() {
        let out = [2, 3];
        let sa = broadcast_strides(&[2, 3], &out);
        let sb = broadcast_strides(&[1, 3], &out);
        let mut seen = Vec::new();
        walk2(&out, &sa, &sb, |o, a, b| seen.push((o, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 0), (4, 4, 1), (5, 5, 2)]
        );
    }

    #[test]
    fn broadcast_shape_rejects_incompatible() {
        assert!(broadcast_shape("t", &[2, 3], &[2, 2]).is_err());
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[1, 3, 4]).unwrap(), vec![2, 3, 4]);
    }
}

//! Trailing-dimension broadcasting.
//!
//! Shapes are aligned at their last dimension; each aligned pair of extents
//! must be equal or one of them 1. Missing leading dimensions are treated
//! as 1. This is the numpy rule restricted to what the model needs.

use crate::error::{Error, Result};

/// Broadcast result shape of `a` and `b`, or a shape error naming both.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        };
    }
    Ok(out)
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides, with 0 in dimensions being broadcast (extent 1 where
/// the output extent is larger), aligned to the output rank.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 && out_shape[offset + i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Iterate a broadcast binary op over arbitrary ranks (slow general path).
pub fn map2_general(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(f64, f64) -> f64,
) -> Vec<f64> {
    let n = numel(out_shape);
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(n);
    let (mut off_a, mut off_b) = (0usize, 0usize);
    for _ in 0..n {
        out.push(f(a[off_a], b[off_b]));
        // increment multi-index, updating offsets incrementally
        for d in (0..rank).rev() {
            idx[d] += 1;
            off_a += sa[d];
            off_b += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off_a -= sa[d] * out_shape[d];
            off_b -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Reduce a gradient of `out_shape` back to `in_shape` by summing over the
/// dimensions that were broadcast.
pub fn reduce_to_shape(grad: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    if out_shape == in_shape {
        return grad.to_vec();
    }
    let strides = broadcast_strides(in_shape, out_shape);
    let rank = out_shape.len();
    let mut out = vec![0.0f64; numel(in_shape)];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for &g in grad {
        out[off] += g;
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes_align_trailing() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[2, 3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[1], &[5, 2]).unwrap(), vec![5, 2]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn reduce_sums_broadcast_dims() {
        // grad over [2,3], input was [3]
        let g = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[3]), vec![11.0, 22.0, 33.0]);
        // input was [2,1]
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[2, 1]), vec![6.0, 60.0]);
    }
}

//! Reductions and matrix multiplication.

use std::rc::Rc;

use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Sum over one axis (removing it).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false)
    }

    /// Mean over one axis (removing it).
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor> {
        let op: &'static str = if mean { "mean_axis" } else { "sum_axis" };
        if axis >= self.shape.len() {
            return Err(Error::invalid(
                op,
                format!("axis {axis} out of range for shape {:?}", self.shape),
            ));
        }
        let n = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let scale = if mean { 1.0 / n as f64 } else { 1.0 };
        let mut out = vec![0.0f64; outer * inner];
        let x = self.data();
        for o in 0..outer {
            let base = o * n * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..n {
                let src = &x[base + j * inner..base + (j + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            if mean {
                for d in dst.iter_mut() {
                    *d *= scale;
                }
            }
        }
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let tape = Tensor::result_tape(op, &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let total = self.numel();
            let f: BackwardFn = Box::new(move |g, sink| {
                let mut gx = vec![0.0f64; total];
                for o in 0..outer {
                    let gsrc = &g[o * inner..(o + 1) * inner];
                    let base = o * n * inner;
                    for j in 0..n {
                        let dst = &mut gx[base + j * inner..base + (j + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(gsrc) {
                            *d += s * scale;
                        }
                    }
                }
                sink.add(id, gx);
            });
            f
        });
        Ok(Tensor::from_op(op, out, out_shape, tape, backward))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data.iter().sum();
        let tape = Tensor::result_tape("sum_all", &[self]).expect("single input");
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let n = self.numel();
            let f: BackwardFn = Box::new(move |g, sink| {
                sink.add(id, vec![g[0]; n]);
            });
            f
        });
        Tensor::from_op("sum_all", vec![s], vec![1], tape, backward)
    }

    /// Inner product of two equally shaped tensors, as a `[1]` tensor.
    pub fn dot(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        self.mul(rhs).map(|p| p.sum_all())
    }

    /// Euclidean norm, as a `[1]` tensor.
    pub fn l2_norm(&self) -> Tensor {
        self.dot(self).expect("same shape").sqrt()
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 {
            return Err(Error::invalid(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", self.shape, rhs.shape),
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let out = matmul_f64(self.data(), rhs.data(), m, k, n);
        let tape = Tensor::result_tape("matmul", &[self, rhs])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ia, ib) = (self.node_id(), rhs.node_id());
            let a = Rc::clone(&self.data);
            let b = Rc::clone(&rhs.data);
            let f: BackwardFn = Box::new(move |g, sink| {
                if let Some(id) = ia {
                    // dA = g . B^T : [m,n] x [n,k]
                    let bt = transpose_f64(&b, k, n);
                    sink.add(id, matmul_f64(g, &bt, m, n, k));
                }
                if let Some(id) = ib {
                    // dB = A^T . g : [k,m] x [m,n]
                    let at = transpose_f64(&a, m, k);
                    sink.add(id, matmul_f64(&at, g, k, m, n));
                }
            });
            f
        });
        Ok(Tensor::from_op("matmul", out, vec![m, n], tape, backward))
    }

    /// 2-D transpose (copying).
    pub fn transpose2(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::invalid(
                "transpose2",
                format!("expected rank 2, got {:?}", self.shape),
            ));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let out = transpose_f64(self.data(), r, c);
        let tape = Tensor::result_tape("transpose2", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let f: BackwardFn = Box::new(move |g, sink| {
                sink.add(id, transpose_f64(g, c, r));
            });
            f
        });
        Ok(Tensor::from_op("transpose2", out, vec![c, r], tape, backward))
    }
}

/// Row-major `[m,k] x [k,n]` product with an accumulation order chosen for
/// contiguous inner loops.
pub(crate) fn matmul_f64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_f64(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn identity_matmul() {
        let i2 = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let m = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(i2.matmul(&m).unwrap().data(), m.data());
    }

    #[test]
    fn small_matmul_value() {
        let a = Tensor::from_vec(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = Tensor::from_vec(vec![3.0, 4.0], &[2, 1]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn mean_axis_values() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let m = x.mean_axis(1).unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.data(), &[2.0, 5.0]);
        let m0 = x.mean_axis(0).unwrap();
        assert_eq!(m0.data(), &[2.5, 3.5, 4.5]);
    }

    #[test]
    fn sum_axis_backward_distributes() {
        let tape = Tape::new();
        let x = Tensor::leaf_from_vec(&tape, vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let s = x.sum_axis(0).unwrap();
        let w = Tensor::from_vec(vec![1.0, 10.0], &[2]).unwrap();
        s.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 10.0, 1.0, 10.0]);
    }

    #[test]
    fn l2_and_dot() {
        let x = Tensor::from_vec(vec![3.0, 4.0], &[2]).unwrap();
        assert!((x.l2_norm().item() - 5.0).abs() < 1e-12);
        let y = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        assert_eq!(x.dot(&y).unwrap().item(), 11.0);
    }
}

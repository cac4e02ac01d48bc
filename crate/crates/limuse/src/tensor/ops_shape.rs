//! Shape manipulation: views, concatenation, slicing, padding, framing.


use super::broadcast::broadcast_strides;
use super::{numel, BackwardFn, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Row-major reshape (free; same backing buffer, gradient passes through).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::invalid(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        let tape = Tensor::result_tape("reshape", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let f: BackwardFn = Box::new(move |g, sink| sink.add(id, g.to_vec()));
            f
        });
        Ok(Tensor::from_op(
            "reshape",
            self.data.as_ref().clone(),
            shape.to_vec(),
            tape,
            backward,
        ))
    }

    /// Materialize a broadcast of this tensor to `shape`; backward sums over
    /// the expanded dimensions.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let from = self.shape.clone();
        if shape.len() < from.len() {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: from,
                rhs: shape.to_vec(),
            });
        }
        let strides = broadcast_strides(&from, shape);
        // validate: every non-broadcast dim must match
        let offset = shape.len() - from.len();
        for (i, &d) in from.iter().enumerate() {
            if d != 1 && d != shape[offset + i] {
                return Err(Error::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: from.clone(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let n = numel(shape);
        let x = self.data();
        let mut out = Vec::with_capacity(n);
        let rank = shape.len();
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..n {
            out.push(x[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                off -= strides[d] * shape[d];
                idx[d] = 0;
            }
        }
        let tape = Tensor::result_tape("broadcast_to", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let out_shape = shape.to_vec();
            let in_shape = from.clone();
            let f: BackwardFn = Box::new(move |g, sink| {
                sink.add(id, super::reduce_to_shape(g, &out_shape, &in_shape));
            });
            f
        });
        Ok(Tensor::from_op("broadcast_to", out, shape.to_vec(), tape, backward))
    }

    /// Swap axes 1 and 2 of a rank-3 tensor (copying).
    pub fn swap12(&self) -> Result<Tensor> {
        if self.shape.len() != 3 {
            return Err(Error::invalid("swap12", format!("expected rank 3, got {:?}", self.shape)));
        }
        let (b, c, t) = (self.shape[0], self.shape[1], self.shape[2]);
        let x = self.data();
        let mut out = vec![0.0f64; x.len()];
        for bi in 0..b {
            let src = &x[bi * c * t..(bi + 1) * c * t];
            let dst = &mut out[bi * c * t..(bi + 1) * c * t];
            for ci in 0..c {
                for ti in 0..t {
                    dst[ti * c + ci] = src[ci * t + ti];
                }
            }
        }
        let tape = Tensor::result_tape("swap12", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let f: BackwardFn = Box::new(move |g, sink| {
                let mut gx = vec![0.0f64; g.len()];
                for bi in 0..b {
                    let src = &g[bi * c * t..(bi + 1) * c * t];
                    let dst = &mut gx[bi * c * t..(bi + 1) * c * t];
                    for ti in 0..t {
                        for ci in 0..c {
                            dst[ci * t + ti] = src[ti * c + ci];
                        }
                    }
                }
                sink.add(id, gx);
            });
            f
        });
        Ok(Tensor::from_op("swap12", out, vec![b, t, c], tape, backward))
    }

    /// Concatenate tensors along `axis`. All other extents must match.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no tensors given"));
        }
        let rank = parts[0].shape.len();
        if axis >= rank {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        for p in parts {
            if p.shape.len() != rank
                || p.shape[..axis] != parts[0].shape[..axis]
                || p.shape[axis + 1..] != parts[0].shape[axis + 1..]
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = parts[0].shape[..axis].iter().product();
        let inner: usize = parts[0].shape[axis + 1..].iter().product();
        let axis_sizes: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total_axis: usize = axis_sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (p, &asz) in parts.iter().zip(&axis_sizes) {
                let chunk = asz * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = parts[0].shape.clone();
        out_shape[axis] = total_axis;
        let refs: Vec<&Tensor> = parts.to_vec();
        let tape = Tensor::result_tape("concat", &refs)?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let ids: Vec<Option<super::NodeId>> = parts.iter().map(|p| p.node_id()).collect();
            let sizes = axis_sizes.clone();
            let f: BackwardFn = Box::new(move |g, sink| {
                let total_inner = total_axis * inner;
                for (pi, id) in ids.iter().enumerate() {
                    let Some(id) = id else { continue };
                    let chunk = sizes[pi] * inner;
                    let start: usize = sizes[..pi].iter().sum::<usize>() * inner;
                    let mut gp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let base = o * total_inner + start;
                        gp.extend_from_slice(&g[base..base + chunk]);
                    }
                    sink.add(*id, gp);
                }
            });
            f
        });
        Ok(Tensor::from_op("concat", out, out_shape, tape, backward))
    }

    /// Slice `[start, start+len)` along `axis` (copying).
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start + len > self.shape[axis] {
            return Err(Error::invalid(
                "slice_axis",
                format!("slice {start}+{len} on axis {axis} of {:?}", self.shape),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n_axis = self.shape[axis];
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n_axis + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let tape = Tensor::result_tape("slice_axis", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let total = self.numel();
            let f: BackwardFn = Box::new(move |g, sink| {
                let gx = sink.buf(id, total);
                for o in 0..outer {
                    let base = (o * n_axis + start) * inner;
                    let gsrc = &g[o * len * inner..(o + 1) * len * inner];
                    for (d, &s) in gx[base..base + len * inner].iter_mut().zip(gsrc) {
                        *d += s;
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op("slice_axis", out, out_shape, tape, backward))
    }

    /// Split along `axis` into consecutive pieces of the given sizes.
    pub fn split_axis(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(Error::invalid(
                "split_axis",
                format!("sizes {sizes:?} do not sum to axis extent {}", self.shape[axis]),
            ));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            out.push(self.slice_axis(axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Zero-pad the last axis by `left` and `right` samples.
    pub fn pad_last(&self, left: usize, right: usize) -> Tensor {
        let t = *self.shape.last().unwrap();
        let rows = self.numel() / t;
        let nt = t + left + right;
        let x = self.data();
        let mut out = vec![0.0f64; rows * nt];
        for r in 0..rows {
            out[r * nt + left..r * nt + left + t].copy_from_slice(&x[r * t..(r + 1) * t]);
        }
        let mut out_shape = self.shape.clone();
        *out_shape.last_mut().unwrap() = nt;
        let tape = Tensor::result_tape("pad_last", &[self]).expect("single input");
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let f: BackwardFn = Box::new(move |g, sink| {
                let mut gx = Vec::with_capacity(rows * t);
                for r in 0..rows {
                    gx.extend_from_slice(&g[r * nt + left..r * nt + left + t]);
                }
                sink.add(id, gx);
            });
            f
        });
        Tensor::from_op("pad_last", out, out_shape, tape, backward)
    }

    /// Nearest-neighbor upsample of the last axis to `new_len`, using the
    /// index map `src = floor(dst * old_len / new_len)`.
    pub fn upsample_nearest_last(&self, new_len: usize) -> Result<Tensor> {
        let t = *self.shape.last().unwrap();
        if t == 0 || new_len == 0 {
            return Err(Error::invalid("upsample_nearest_last", "empty axis"));
        }
        let rows = self.numel() / t;
        let index: Vec<usize> = (0..new_len).map(|d| d * t / new_len).collect();
        let x = self.data();
        let mut out = Vec::with_capacity(rows * new_len);
        for r in 0..rows {
            let src = &x[r * t..(r + 1) * t];
            out.extend(index.iter().map(|&i| src[i]));
        }
        let mut out_shape = self.shape.clone();
        *out_shape.last_mut().unwrap() = new_len;
        let tape = Tensor::result_tape("upsample_nearest_last", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let index = index.clone();
            let f: BackwardFn = Box::new(move |g, sink| {
                let mut gx = vec![0.0f64; rows * t];
                for r in 0..rows {
                    let dst = &mut gx[r * t..(r + 1) * t];
                    let gsrc = &g[r * new_len..(r + 1) * new_len];
                    for (&i, &gv) in index.iter().zip(gsrc) {
                        dst[i] += gv;
                    }
                }
                sink.add(id, gx);
            });
            f
        });
        Ok(Tensor::from_op("upsample_nearest_last", out, out_shape, tape, backward))
    }

    /// Cut a `[B, C, L]` tensor into 50%-style overlapped frames:
    /// `[B*T_blk, C, size]` with `T_blk = (L - size)/hop + 1`.
    /// `L - size` must be divisible by `hop` (pad first).
    pub fn unfold_frames(&self, size: usize, hop: usize) -> Result<Tensor> {
        if self.shape.len() != 3 {
            return Err(Error::invalid("unfold_frames", "expected rank 3"));
        }
        let (b, c, l) = (self.shape[0], self.shape[1], self.shape[2]);
        if l < size || (l - size) % hop != 0 {
            return Err(Error::invalid(
                "unfold_frames",
                format!("length {l} incompatible with size {size} hop {hop}"),
            ));
        }
        let t_blk = (l - size) / hop + 1;
        let x = self.data();
        let mut out = Vec::with_capacity(b * t_blk * c * size);
        for bi in 0..b {
            for blk in 0..t_blk {
                let start = blk * hop;
                for ci in 0..c {
                    let base = (bi * c + ci) * l + start;
                    out.extend_from_slice(&x[base..base + size]);
                }
            }
        }
        let out_shape = vec![b * t_blk, c, size];
        let tape = Tensor::result_tape("unfold_frames", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let f: BackwardFn = Box::new(move |g, sink| {
                let mut gx = vec![0.0f64; b * c * l];
                let mut src = 0;
                for bi in 0..b {
                    for blk in 0..t_blk {
                        let start = blk * hop;
                        for ci in 0..c {
                            let base = (bi * c + ci) * l + start;
                            for (d, &s) in gx[base..base + size].iter_mut().zip(&g[src..src + size])
                            {
                                *d += s;
                            }
                            src += size;
                        }
                    }
                }
                sink.add(id, gx);
            });
            f
        });
        Ok(Tensor::from_op("unfold_frames", out, out_shape, tape, backward))
    }

    /// Inverse of [`Tensor::unfold_frames`]: overlap-add `[B*T_blk, C, size]`
    /// back to `[B, C, L]`, dividing each position by the number of frames
    /// covering it (exact partition of unity for rectangular overlap).
    pub fn fold_frames(&self, batch: usize, hop: usize, out_len: usize) -> Result<Tensor> {
        if self.shape.len() != 3 {
            return Err(Error::invalid("fold_frames", "expected rank 3"));
        }
        let (bt, c, size) = (self.shape[0], self.shape[1], self.shape[2]);
        if bt % batch != 0 {
            return Err(Error::invalid("fold_frames", "block count not divisible by batch"));
        }
        let t_blk = bt / batch;
        if (t_blk - 1) * hop + size != out_len {
            return Err(Error::invalid(
                "fold_frames",
                format!("{t_blk} frames of {size}/{hop} do not tile length {out_len}"),
            ));
        }
        let mut counts = vec![0.0f64; out_len];
        for blk in 0..t_blk {
            for s in 0..size {
                counts[blk * hop + s] += 1.0;
            }
        }
        let x = self.data();
        let mut out = vec![0.0f64; batch * c * out_len];
        for bi in 0..batch {
            for blk in 0..t_blk {
                for ci in 0..c {
                    let src = ((bi * t_blk + blk) * c + ci) * size;
                    let dst = (bi * c + ci) * out_len + blk * hop;
                    for (o, &v) in out[dst..dst + size].iter_mut().zip(&x[src..src + size]) {
                        *o += v;
                    }
                }
            }
        }
        for row in out.chunks_exact_mut(out_len) {
            for (o, &cnt) in row.iter_mut().zip(&counts) {
                *o /= cnt;
            }
        }
        let out_shape = vec![batch, c, out_len];
        let tape = Tensor::result_tape("fold_frames", &[self])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let counts = counts.clone();
            let f: BackwardFn = Box::new(move |g, sink| {
                let mut gx = vec![0.0f64; bt * c * size];
                for bi in 0..batch {
                    for blk in 0..t_blk {
                        for ci in 0..c {
                            let dst = ((bi * t_blk + blk) * c + ci) * size;
                            let src = (bi * c + ci) * out_len + blk * hop;
                            for s in 0..size {
                                gx[dst + s] = g[src + s] / counts[blk * hop + s];
                            }
                        }
                    }
                }
                sink.add(id, gx);
            });
            f
        });
        Ok(Tensor::from_op("fold_frames", out, out_shape, tape, backward))
    }
}

//! 1-D convolutions: grouped/dilated conv, transposed conv.
//!
//! Inner loops are written as contiguous row updates with 4-way input
//! blocking so the compiler can vectorize them; the pointwise (k=1) path
//! carries almost all of the training FLOPs and gets dedicated kernels.

use std::rc::Rc;

use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

/// Padding policy for `conv1d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// No padding.
    Valid,
    /// Pad so stride-1 output length equals input length, split evenly
    /// (left gets the smaller half).
    Same,
    /// All `dilation*(k-1)` zeros on the left; output at `t` depends only
    /// on inputs `<= t`.
    Causal,
    /// Explicit (left, right) zero padding.
    Explicit(usize, usize),
}

impl PadMode {
    fn amounts(self, k: usize, dilation: usize) -> (usize, usize) {
        let span = dilation * (k - 1);
        match self {
            PadMode::Valid => (0, 0),
            PadMode::Same => (span / 2, span - span / 2),
            PadMode::Causal => (span, 0),
            PadMode::Explicit(l, r) => (l, r),
        }
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    b: usize,
    cin: usize,
    cout: usize,
    k: usize,
    t_in: usize,
    t_pad: usize,
    t_out: usize,
    pl: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    stride: usize,
    dilation: usize,
}

impl ConvDims {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.dilation == 1 && self.pl == 0
    }

    fn padded(&self) -> bool {
        self.t_pad != self.t_in
    }
}

fn conv_dims(
    x_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    dilation: usize,
    pad: PadMode,
    groups: usize,
) -> Result<ConvDims> {
    if x_shape.len() != 3 || w_shape.len() != 3 {
        return Err(Error::invalid("conv1d", "expected x [B,Cin,T] and w [Cout,Cin/g,k]"));
    }
    let (b, cin, t_in) = (x_shape[0], x_shape[1], x_shape[2]);
    let (cout, w_cin, k) = (w_shape[0], w_shape[1], w_shape[2]);
    if k < 1 || stride < 1 || dilation < 1 || groups < 1 {
        return Err(Error::invalid("conv1d", "k, stride, dilation, groups must be >= 1"));
    }
    if cin % groups != 0 || cout % groups != 0 {
        return Err(Error::invalid(
            "conv1d",
            format!("channels in={cin} out={cout} not divisible by groups={groups}"),
        ));
    }
    if w_cin != cin / groups {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: x_shape.to_vec(),
            rhs: w_shape.to_vec(),
        });
    }
    let (pl, pr) = pad.amounts(k, dilation);
    let t_pad = t_in + pl + pr;
    let span = dilation * (k - 1) + 1;
    if t_pad < span {
        return Err(Error::SequenceTooShort { op: "conv1d", len: t_in, needed: span });
    }
    let t_out = (t_pad - span) / stride + 1;
    Ok(ConvDims {
        b,
        cin,
        cout,
        k,
        t_in,
        t_pad,
        t_out,
        pl,
        groups,
        cin_g: cin / groups,
        cout_g: cout / groups,
        stride,
        dilation,
    })
}

fn pad_rows(x: &[f64], rows: usize, t: usize, pl: usize, t_pad: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; rows * t_pad];
    for r in 0..rows {
        out[r * t_pad + pl..r * t_pad + pl + t].copy_from_slice(&x[r * t..(r + 1) * t]);
    }
    out
}

/// `out_row += sum_i w_i * rows_i`, blocked 4 inputs at a time.
#[inline]
fn axpy_block(out_row: &mut [f64], rows: &[&[f64]], ws: &[f64]) {
    match rows.len() {
        4 => {
            let (x0, x1, x2, x3) = (rows[0], rows[1], rows[2], rows[3]);
            let (w0, w1, w2, w3) = (ws[0], ws[1], ws[2], ws[3]);
            for (i, o) in out_row.iter_mut().enumerate() {
                *o += w0 * x0[i] + w1 * x1[i] + w2 * x2[i] + w3 * x3[i];
            }
        }
        2 => {
            let (x0, x1) = (rows[0], rows[1]);
            let (w0, w1) = (ws[0], ws[1]);
            for (i, o) in out_row.iter_mut().enumerate() {
                *o += w0 * x0[i] + w1 * x1[i];
            }
        }
        1 => {
            let (x0, w0) = (rows[0], ws[0]);
            for (o, &xv) in out_row.iter_mut().zip(x0) {
                *o += w0 * xv;
            }
        }
        _ => {
            for (ri, row) in rows.iter().enumerate() {
                let w = ws[ri];
                for (o, &xv) in out_row.iter_mut().zip(*row) {
                    *o += w * xv;
                }
            }
        }
    }
}

/// Two output rows fed by four input rows in one pass: the throughput
/// kernel of the pointwise convolution.
#[inline]
fn axpy_2x4(o0: &mut [f64], o1: &mut [f64], xs: [&[f64]; 4], w0: [f64; 4], w1: [f64; 4]) {
    let [x0, x1, x2, x3] = xs;
    for i in 0..o0.len() {
        let (a, b, c, e) = (x0[i], x1[i], x2[i], x3[i]);
        o0[i] += w0[0] * a + w0[1] * b + w0[2] * c + w0[3] * e;
        o1[i] += w1[0] * a + w1[1] * b + w1[2] * c + w1[3] * e;
    }
}

/// Pointwise convolution: `out[b,co,:] = bias + sum_ci w[co,ci] x[b,ci,:]`,
/// per group, blocked 2 outputs x 4 inputs.
fn conv1x1_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let t = d.t_in;
    let mut out = vec![0.0f64; d.b * d.cout * t];
    for bi in 0..d.b {
        let xb = &x[bi * d.cin * t..(bi + 1) * d.cin * t];
        let ob = &mut out[bi * d.cout * t..(bi + 1) * d.cout * t];
        for g in 0..d.groups {
            if let Some(bv) = bias {
                for co_l in 0..d.cout_g {
                    let co = g * d.cout_g + co_l;
                    ob[co * t..(co + 1) * t].fill(bv[co]);
                }
            }
            let xg = &xb[g * d.cin_g * t..(g + 1) * d.cin_g * t];
            let mut co_l = 0;
            while co_l + 2 <= d.cout_g {
                let co = g * d.cout_g + co_l;
                let (head, tail) = ob[co * t..].split_at_mut(t);
                let o0 = head;
                let o1 = &mut tail[..t];
                let w0 = &w[co * d.cin_g..(co + 1) * d.cin_g];
                let w1 = &w[(co + 1) * d.cin_g..(co + 2) * d.cin_g];
                let mut ci = 0;
                while ci + 4 <= d.cin_g {
                    let base = ci * t;
                    axpy_2x4(
                        o0,
                        o1,
                        [
                            &xg[base..base + t],
                            &xg[base + t..base + 2 * t],
                            &xg[base + 2 * t..base + 3 * t],
                            &xg[base + 3 * t..base + 4 * t],
                        ],
                        [w0[ci], w0[ci + 1], w0[ci + 2], w0[ci + 3]],
                        [w1[ci], w1[ci + 1], w1[ci + 2], w1[ci + 3]],
                    );
                    ci += 4;
                }
                while ci < d.cin_g {
                    let base = ci * t;
                    axpy_block(o0, &[&xg[base..base + t]], &w0[ci..ci + 1]);
                    axpy_block(o1, &[&xg[base..base + t]], &w1[ci..ci + 1]);
                    ci += 1;
                }
                co_l += 2;
            }
            while co_l < d.cout_g {
                let co = g * d.cout_g + co_l;
                let orow = &mut ob[co * t..(co + 1) * t];
                let wrow = &w[co * d.cin_g..(co + 1) * d.cin_g];
                let mut ci = 0;
                while ci + 4 <= d.cin_g {
                    let base = ci * t;
                    axpy_block(
                        orow,
                        &[
                            &xg[base..base + t],
                            &xg[base + t..base + 2 * t],
                            &xg[base + 2 * t..base + 3 * t],
                            &xg[base + 3 * t..base + 4 * t],
                        ],
                        &wrow[ci..ci + 4],
                    );
                    ci += 4;
                }
                while ci < d.cin_g {
                    let base = ci * t;
                    axpy_block(orow, &[&xg[base..base + t]], &wrow[ci..ci + 1]);
                    ci += 1;
                }
                co_l += 1;
            }
        }
    }
    out
}

/// Pointwise backward wrt input: `gx[b,ci,:] += sum_co w[co,ci] g[b,co,:]`,
/// blocked 2 input rows x 4 gradient rows.
fn conv1x1_backward_x(g: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let t = d.t_in;
    let mut gx = vec![0.0f64; d.b * d.cin * t];
    for bi in 0..d.b {
        let gb = &g[bi * d.cout * t..(bi + 1) * d.cout * t];
        let xb = &mut gx[bi * d.cin * t..(bi + 1) * d.cin * t];
        for grp in 0..d.groups {
            let gg = &gb[grp * d.cout_g * t..(grp + 1) * d.cout_g * t];
            let mut ci_l = 0;
            while ci_l + 2 <= d.cin_g {
                let ci = grp * d.cin_g + ci_l;
                let (head, tail) = xb[ci * t..].split_at_mut(t);
                let x0 = head;
                let x1 = &mut tail[..t];
                let mut co = 0;
                while co + 4 <= d.cout_g {
                    let base = co * t;
                    axpy_2x4(
                        x0,
                        x1,
                        [
                            &gg[base..base + t],
                            &gg[base + t..base + 2 * t],
                            &gg[base + 2 * t..base + 3 * t],
                            &gg[base + 3 * t..base + 4 * t],
                        ],
                        [
                            w[(grp * d.cout_g + co) * d.cin_g + ci_l],
                            w[(grp * d.cout_g + co + 1) * d.cin_g + ci_l],
                            w[(grp * d.cout_g + co + 2) * d.cin_g + ci_l],
                            w[(grp * d.cout_g + co + 3) * d.cin_g + ci_l],
                        ],
                        [
                            w[(grp * d.cout_g + co) * d.cin_g + ci_l + 1],
                            w[(grp * d.cout_g + co + 1) * d.cin_g + ci_l + 1],
                            w[(grp * d.cout_g + co + 2) * d.cin_g + ci_l + 1],
                            w[(grp * d.cout_g + co + 3) * d.cin_g + ci_l + 1],
                        ],
                    );
                    co += 4;
                }
                while co < d.cout_g {
                    let base = co * t;
                    let wv0 = w[(grp * d.cout_g + co) * d.cin_g + ci_l];
                    let wv1 = w[(grp * d.cout_g + co) * d.cin_g + ci_l + 1];
                    axpy_block(x0, &[&gg[base..base + t]], &[wv0]);
                    axpy_block(x1, &[&gg[base..base + t]], &[wv1]);
                    co += 1;
                }
                ci_l += 2;
            }
            while ci_l < d.cin_g {
                let ci = grp * d.cin_g + ci_l;
                let xrow = &mut xb[ci * t..(ci + 1) * t];
                let mut co = 0;
                while co + 4 <= d.cout_g {
                    let base = co * t;
                    axpy_block(
                        xrow,
                        &[
                            &gg[base..base + t],
                            &gg[base + t..base + 2 * t],
                            &gg[base + 2 * t..base + 3 * t],
                            &gg[base + 3 * t..base + 4 * t],
                        ],
                        &[
                            w[(grp * d.cout_g + co) * d.cin_g + ci_l],
                            w[(grp * d.cout_g + co + 1) * d.cin_g + ci_l],
                            w[(grp * d.cout_g + co + 2) * d.cin_g + ci_l],
                            w[(grp * d.cout_g + co + 3) * d.cin_g + ci_l],
                        ],
                    );
                    co += 4;
                }
                while co < d.cout_g {
                    let base = co * t;
                    axpy_block(
                        xrow,
                        &[&gg[base..base + t]],
                        &[w[(grp * d.cout_g + co) * d.cin_g + ci_l]],
                    );
                    co += 1;
                }
                ci_l += 1;
            }
        }
    }
    gx
}

/// Pointwise backward wrt weights: `gw[co,ci] += <g[b,co,:], x[b,ci,:]>`,
/// four input rows per pass over the gradient row.
fn conv1x1_backward_w(g: &[f64], x: &[f64], gw: &mut [f64], d: &ConvDims) {
    let t = d.t_in;
    for bi in 0..d.b {
        let gb = &g[bi * d.cout * t..(bi + 1) * d.cout * t];
        let xb = &x[bi * d.cin * t..(bi + 1) * d.cin * t];
        for grp in 0..d.groups {
            for co_l in 0..d.cout_g {
                let co = grp * d.cout_g + co_l;
                let grow = &gb[co * t..(co + 1) * t];
                let wrow = &mut gw[co * d.cin_g..(co + 1) * d.cin_g];
                let mut ci = 0;
                while ci + 4 <= d.cin_g {
                    let base = (grp * d.cin_g + ci) * t;
                    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                    let x0 = &xb[base..base + t];
                    let x1 = &xb[base + t..base + 2 * t];
                    let x2 = &xb[base + 2 * t..base + 3 * t];
                    let x3 = &xb[base + 3 * t..base + 4 * t];
                    for (i, &gv) in grow.iter().enumerate() {
                        s0 += gv * x0[i];
                        s1 += gv * x1[i];
                        s2 += gv * x2[i];
                        s3 += gv * x3[i];
                    }
                    wrow[ci] += s0;
                    wrow[ci + 1] += s1;
                    wrow[ci + 2] += s2;
                    wrow[ci + 3] += s3;
                    ci += 4;
                }
                while ci < d.cin_g {
                    let base = (grp * d.cin_g + ci) * t;
                    let xr = &xb[base..base + t];
                    let s: f64 = grow.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                    wrow[ci] += s;
                    ci += 1;
                }
            }
        }
    }
}

/// General path (k > 1, strides, dilation); operates on the padded input.
fn conv_general_forward(xp: &[f64], w: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0f64; d.b * d.cout * d.t_out];
    for bi in 0..d.b {
        for g in 0..d.groups {
            for co_l in 0..d.cout_g {
                let co = g * d.cout_g + co_l;
                let orow = &mut out[(bi * d.cout + co) * d.t_out..(bi * d.cout + co + 1) * d.t_out];
                if let Some(bv) = bias {
                    orow.fill(bv[co]);
                }
                for ci_l in 0..d.cin_g {
                    let ci = g * d.cin_g + ci_l;
                    let xrow = &xp[(bi * d.cin + ci) * d.t_pad..(bi * d.cin + ci + 1) * d.t_pad];
                    let wrow = &w[(co * d.cin_g + ci_l) * d.k..(co * d.cin_g + ci_l + 1) * d.k];
                    for (j, &wv) in wrow.iter().enumerate() {
                        let off = j * d.dilation;
                        if d.stride == 1 {
                            for (o, &xv) in orow.iter_mut().zip(&xrow[off..off + d.t_out]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (t, o) in orow.iter_mut().enumerate() {
                                *o += wv * xrow[off + t * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

impl Tensor {
    /// Grouped dilated 1-D convolution.
    ///
    /// `x: [B, Cin, T]`, `w: [Cout, Cin/groups, k]`, `bias: [Cout]`.
    /// Output length is `(T + pad - dilation*(k-1) - 1)/stride + 1`.
    pub fn conv1d_grouped(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        dilation: usize,
        pad: PadMode,
        groups: usize,
    ) -> Result<Tensor> {
        let d = conv_dims(&self.shape, &w.shape, stride, dilation, pad, groups)?;
        if let Some(bv) = bias {
            if bv.shape != [d.cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: w.shape.clone(),
                    rhs: bv.shape.clone(),
                });
            }
        }
        let out = if d.pointwise() {
            conv1x1_forward(self.data(), w.data(), bias.map(|b| b.data()), &d)
        } else if d.padded() {
            let xp = pad_rows(self.data(), d.b * d.cin, d.t_in, d.pl, d.t_pad);
            conv_general_forward(&xp, w.data(), bias.map(|b| b.data()), &d)
        } else {
            conv_general_forward(self.data(), w.data(), bias.map(|b| b.data()), &d)
        };
        let out_shape = vec![d.b, d.cout, d.t_out];

        let mut inputs = vec![self, w];
        if let Some(bv) = bias {
            inputs.push(bv);
        }
        let tape = Tensor::result_tape("conv1d", &inputs)?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ix, iw, ib) = (self.node_id(), w.node_id(), bias.and_then(|b| b.node_id()));
            let x = Rc::clone(&self.data);
            let wd = Rc::clone(&w.data);
            let dims = d;
            let f: BackwardFn = Box::new(move |g, sink| {
                let d = &dims;
                if d.pointwise() {
                    if let Some(id) = ix {
                        sink.add(id, conv1x1_backward_x(g, &wd, d));
                    }
                    if let Some(id) = iw {
                        let gw = sink.buf(id, d.cout * d.cin_g);
                        conv1x1_backward_w(g, &x, gw, d);
                    }
                } else {
                    let xp_owned;
                    let xp: &[f64] = if d.padded() {
                        xp_owned = pad_rows(&x, d.b * d.cin, d.t_in, d.pl, d.t_pad);
                        &xp_owned
                    } else {
                        &x
                    };
                    if let Some(id) = ix {
                        sink.add(id, conv_general_backward_x(g, &wd, d));
                    }
                    if let Some(id) = iw {
                        let gw = sink.buf(id, d.cout * d.cin_g * d.k);
                        conv_general_backward_w(g, xp, gw, d);
                    }
                }
                if let Some(id) = ib {
                    let gb = sink.buf(id, d.cout);
                    for bi in 0..d.b {
                        for co in 0..d.cout {
                            gb[co] += g
                                [(bi * d.cout + co) * d.t_out..(bi * d.cout + co + 1) * d.t_out]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op("conv1d", out, out_shape, tape, backward))
    }

    /// Ungrouped convolution (`groups = 1`).
    pub fn conv1d(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        dilation: usize,
        pad: PadMode,
    ) -> Result<Tensor> {
        self.conv1d_grouped(w, bias, stride, dilation, pad, 1)
    }

    /// Transposed 1-D convolution (the adjoint of `conv1d` with the same
    /// kernel and stride, plus bias).
    ///
    /// `x: [B, Cin, T]`, `w: [Cin, Cout, k]` -> `[B, Cout, (T-1)*stride + k]`.
    pub fn conv_transpose1d(
        &self,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
    ) -> Result<Tensor> {
        if self.shape.len() != 3 || w.shape.len() != 3 {
            return Err(Error::invalid(
                "conv_transpose1d",
                "expected x [B,Cin,T] and w [Cin,Cout,k]",
            ));
        }
        let (b, cin, t) = (self.shape[0], self.shape[1], self.shape[2]);
        let (w_cin, cout, k) = (w.shape[0], w.shape[1], w.shape[2]);
        if w_cin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose1d",
                lhs: self.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        if let Some(bv) = bias {
            if bv.shape != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv_transpose1d",
                    lhs: w.shape.clone(),
                    rhs: bv.shape.clone(),
                });
            }
        }
        let l = (t - 1) * stride + k;
        let x = self.data();
        let wd = w.data();
        let mut out = vec![0.0f64; b * cout * l];
        if let Some(bv) = bias {
            for bi in 0..b {
                for co in 0..cout {
                    out[(bi * cout + co) * l..(bi * cout + co + 1) * l].fill(bv.data()[co]);
                }
            }
        }
        for bi in 0..b {
            for ci in 0..cin {
                let xrow = &x[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                for co in 0..cout {
                    let wrow = &wd[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                    let orow = &mut out[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                    for (ti, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let off = ti * stride;
                        for (o, &wv) in orow[off..off + k].iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        let out_shape = vec![b, cout, l];
        let mut inputs = vec![self, w];
        if let Some(bv) = bias {
            inputs.push(bv);
        }
        let tape = Tensor::result_tape("conv_transpose1d", &inputs)?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ix, iw, ib) = (self.node_id(), w.node_id(), bias.and_then(|bv| bv.node_id()));
            let xd = Rc::clone(&self.data);
            let wd = Rc::clone(&w.data);
            let f: BackwardFn = Box::new(move |g, sink| {
                if let Some(id) = ix {
                    let mut gx = vec![0.0f64; b * cin * t];
                    for bi in 0..b {
                        for ci in 0..cin {
                            let xg = &mut gx[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                            for co in 0..cout {
                                let wrow = &wd[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                                let grow = &g[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                                for (ti, xgv) in xg.iter_mut().enumerate() {
                                    let off = ti * stride;
                                    let acc: f64 = grow[off..off + k]
                                        .iter()
                                        .zip(wrow)
                                        .map(|(&a, &b)| a * b)
                                        .sum();
                                    *xgv += acc;
                                }
                            }
                        }
                    }
                    sink.add(id, gx);
                }
                if let Some(id) = iw {
                    let gw = sink.buf(id, cin * cout * k);
                    for bi in 0..b {
                        for ci in 0..cin {
                            let xrow = &xd[(bi * cin + ci) * t..(bi * cin + ci + 1) * t];
                            for co in 0..cout {
                                let grow = &g[(bi * cout + co) * l..(bi * cout + co + 1) * l];
                                let wg = &mut gw[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                                for (ti, &xv) in xrow.iter().enumerate() {
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let off = ti * stride;
                                    for (w_acc, &gv) in wg.iter_mut().zip(&grow[off..off + k]) {
                                        *w_acc += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(id) = ib {
                    let gb = sink.buf(id, cout);
                    for bi in 0..b {
                        for co in 0..cout {
                            gb[co] += g[(bi * cout + co) * l..(bi * cout + co + 1) * l]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op("conv_transpose1d", out, out_shape, tape, backward))
    }
}

/// General backward wrt input; returns the unpadded gradient directly.
fn conv_general_backward_x(g: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut gxp = vec![0.0f64; d.b * d.cin * d.t_pad];
    for bi in 0..d.b {
        for grp in 0..d.groups {
            for co_l in 0..d.cout_g {
                let co = grp * d.cout_g + co_l;
                let grow = &g[(bi * d.cout + co) * d.t_out..(bi * d.cout + co + 1) * d.t_out];
                for ci_l in 0..d.cin_g {
                    let ci = grp * d.cin_g + ci_l;
                    let xrow =
                        &mut gxp[(bi * d.cin + ci) * d.t_pad..(bi * d.cin + ci + 1) * d.t_pad];
                    let wrow = &w[(co * d.cin_g + ci_l) * d.k..(co * d.cin_g + ci_l + 1) * d.k];
                    for (j, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let off = j * d.dilation;
                        if d.stride == 1 {
                            for (xg, &gv) in xrow[off..off + d.t_out].iter_mut().zip(grow) {
                                *xg += wv * gv;
                            }
                        } else {
                            for (t, &gv) in grow.iter().enumerate() {
                                xrow[off + t * d.stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    if !d.padded() {
        return gxp;
    }
    let mut gx = Vec::with_capacity(d.b * d.cin * d.t_in);
    for r in 0..d.b * d.cin {
        gx.extend_from_slice(&gxp[r * d.t_pad + d.pl..r * d.t_pad + d.pl + d.t_in]);
    }
    gx
}

fn conv_general_backward_w(g: &[f64], xp: &[f64], gw: &mut [f64], d: &ConvDims) {
    for bi in 0..d.b {
        for grp in 0..d.groups {
            for co_l in 0..d.cout_g {
                let co = grp * d.cout_g + co_l;
                let grow = &g[(bi * d.cout + co) * d.t_out..(bi * d.cout + co + 1) * d.t_out];
                for ci_l in 0..d.cin_g {
                    let ci = grp * d.cin_g + ci_l;
                    let xrow = &xp[(bi * d.cin + ci) * d.t_pad..(bi * d.cin + ci + 1) * d.t_pad];
                    for j in 0..d.k {
                        let off = j * d.dilation;
                        let acc: f64 = if d.stride == 1 {
                            grow.iter().zip(&xrow[off..off + d.t_out]).map(|(&a, &b)| a * b).sum()
                        } else {
                            grow.iter()
                                .enumerate()
                                .map(|(t, &gv)| gv * xrow[off + t * d.stride])
                                .sum()
                        };
                        gw[(co * d.cin_g + ci_l) * d.k + j] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(data: Vec<f64>, c: usize) -> Tensor {
        let t = data.len() / c;
        Tensor::from_vec(data, &[1, c, t]).unwrap()
    }

    #[test]
    fn moving_sum_no_pad() {
        // x=[1,2,3], w=[1,1] -> [3,5]
        let x = t3(vec![1.0, 2.0, 3.0], 1);
        let w = Tensor::from_vec(vec![1.0, 1.0], &[1, 1, 2]).unwrap();
        let y = x.conv1d(&w, None, 1, 1, PadMode::Valid).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t3(vec![0.5, -1.0, 2.0, 7.0], 1);
        let w = Tensor::from_vec(vec![1.0], &[1, 1, 1]).unwrap();
        let y = x.conv1d(&w, None, 1, 1, PadMode::Valid).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn causal_output_ignores_future() {
        // causal pad, k=3, dilation 2: output[t] depends only on inputs <= t
        let base: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let mut perturbed = base.clone();
        perturbed[7] += 100.0;
        let w = Tensor::from_vec(vec![0.3, -0.5, 0.9], &[1, 1, 3]).unwrap();
        let y0 = t3(base, 1).conv1d(&w, None, 1, 2, PadMode::Causal).unwrap();
        let y1 = t3(perturbed, 1).conv1d(&w, None, 1, 2, PadMode::Causal).unwrap();
        assert_eq!(y0.shape(), &[1, 1, 10]);
        for t in 0..7 {
            assert_eq!(y0.data()[t], y1.data()[t], "output at {t} saw the future");
        }
        assert_ne!(y0.data()[7], y1.data()[7]);
    }

    #[test]
    fn groups_one_matches_plain_and_split_stitch() {
        // groups=2 equals two independent convolutions concatenated
        let x = Tensor::from_vec((0..2 * 4 * 6).map(|v| (v as f64) * 0.1).collect(), &[2, 4, 6])
            .unwrap();
        let w = Tensor::from_vec(
            (0..4 * 2 * 3).map(|v| (v as f64) * 0.05 - 0.2).collect(),
            &[4, 2, 3],
        )
        .unwrap();
        let y = x.conv1d_grouped(&w, None, 1, 1, PadMode::Valid, 2).unwrap();

        let xs = x.split_axis(1, &[2, 2]).unwrap();
        let ws = w.split_axis(0, &[2, 2]).unwrap();
        let y0 = xs[0].conv1d(&ws[0], None, 1, 1, PadMode::Valid).unwrap();
        let y1 = xs[1].conv1d(&ws[1], None, 1, 1, PadMode::Valid).unwrap();
        let stitched = Tensor::concat(&[&y0, &y1], 1).unwrap();
        for (a, b) in y.data().iter().zip(stitched.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_grouped_matches_split_stitch() {
        // the dedicated k=1 kernel against the same split-and-stitch oracle
        let x = Tensor::from_vec((0..2 * 6 * 9).map(|v| (v as f64) * 0.07 - 1.0).collect(), &[2, 6, 9])
            .unwrap();
        let w = Tensor::from_vec((0..8 * 3).map(|v| (v as f64) * 0.03 - 0.1).collect(), &[8, 3, 1])
            .unwrap();
        let y = x.conv1d_grouped(&w, None, 1, 1, PadMode::Valid, 2).unwrap();
        let xs = x.split_axis(1, &[3, 3]).unwrap();
        let ws = w.split_axis(0, &[4, 4]).unwrap();
        let y0 = xs[0].conv1d(&ws[0], None, 1, 1, PadMode::Valid).unwrap();
        let y1 = xs[1].conv1d(&ws[1], None, 1, 1, PadMode::Valid).unwrap();
        let stitched = Tensor::concat(&[&y0, &y1], 1).unwrap();
        for (a, b) in y.data().iter().zip(stitched.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_unit_kernel_is_identity() {
        let x = Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[1, 3, 4]).unwrap();
        let w = Tensor::from_vec(vec![1.0, 1.0, 1.0], &[3, 1, 1]).unwrap();
        let y = x.conv1d_grouped(&w, None, 1, 1, PadMode::Valid, 3).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn transpose_single_frame_reproduces_kernel() {
        let x = Tensor::from_vec(vec![1.0], &[1, 1, 1]).unwrap();
        let w = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4], &[1, 1, 4]).unwrap();
        let y = x.conv_transpose1d(&w, None, 4).unwrap();
        assert_eq!(y.data(), w.data());
    }

    #[test]
    fn transpose_overlapping_frames_sum() {
        // stride = k/2: overlap region gets contributions from both frames
        let x = Tensor::from_vec(vec![1.0, 1.0], &[1, 1, 2]).unwrap();
        let w = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0], &[1, 1, 4]).unwrap();
        let y = x.conv_transpose1d(&w, None, 2).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with tied kernels, stride 2
        let rng_vals = |n: usize, seed: u64| -> Vec<f64> {
            let mut s = seed;
            (0..n)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
                })
                .collect()
        };
        let (cin, cout, k, t, stride) = (3, 2, 4, 9, 2);
        let l = (t - 1) * stride + k; // conv side input length
        let x = Tensor::from_vec(rng_vals(cin * l, 1), &[1, cin, l]).unwrap();
        let wc = Tensor::from_vec(rng_vals(cout * cin * k, 2), &[cout, cin, k]).unwrap();
        let y = Tensor::from_vec(rng_vals(cout * t, 3), &[1, cout, t]).unwrap();
        let cx = x.conv1d(&wc, None, stride, 1, PadMode::Valid).unwrap();
        // the same buffer viewed as [Cin(=cout), Cout(=cin), k] feeds convT
        let wt = wc.clone();
        let cty = y.conv_transpose1d(&wt, None, stride).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(cty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "adjoint identity violated: {lhs} vs {rhs}");
    }

    #[test]
    fn too_short_sequence_errors() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[1, 1, 2]).unwrap();
        let w = Tensor::from_vec(vec![1.0; 5], &[1, 1, 5]).unwrap();
        match x.conv1d(&w, None, 1, 1, PadMode::Valid) {
            Err(Error::SequenceTooShort { .. }) => {}
            other => panic!("expected SequenceTooShort, got {other:?}"),
        }
    }

    #[test]
    fn divisibility_violation_errors() {
        let x = Tensor::zeros(&[1, 3, 4]);
        let w = Tensor::zeros(&[2, 1, 1]);
        assert!(x.conv1d_grouped(&w, None, 1, 1, PadMode::Valid, 2).is_err());
    }
}

//! Elementwise operations: broadcast binary arithmetic, pointwise
//! nonlinearities, and PReLU.

use std::rc::Rc;

use super::broadcast::map2_general;
use super::{broadcast_shape, reduce_to_shape, BackwardFn, GradSink, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

/// Forward data of a broadcast binary op, with fast paths for the common
/// layouts (equal shapes, scalar rhs, rhs broadcast along the last axis).
fn binary_forward(op: BinOp, a: &Tensor, b: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    let (ad, bd) = (a.data(), b.data());
    if a.shape == b.shape {
        return ad.iter().zip(bd).map(|(&x, &y)| op.eval(x, y)).collect();
    }
    if bd.len() == 1 {
        let y = bd[0];
        return ad.iter().map(|&x| op.eval(x, y)).collect();
    }
    if ad.len() == 1 {
        let x = ad[0];
        return bd.iter().map(|&y| op.eval(x, y)).collect();
    }
    // rhs equal to lhs except a trailing 1: one rhs value per row
    if a.shape.as_slice() == out_shape
        && b.shape.len() == a.shape.len()
        && *b.shape.last().unwrap() == 1
        && b.shape[..b.shape.len() - 1] == a.shape[..a.shape.len() - 1]
    {
        let t = *a.shape.last().unwrap();
        let mut out = Vec::with_capacity(ad.len());
        for (row, &y) in ad.chunks_exact(t).zip(bd.iter()) {
            out.extend(row.iter().map(|&x| op.eval(x, y)));
        }
        return out;
    }
    map2_general(ad, &a.shape, bd, &b.shape, out_shape, |x, y| op.eval(x, y))
}

impl Tensor {
    fn binary(&self, op: BinOp, rhs: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(op.name(), &self.shape, &rhs.shape)?;
        let out = binary_forward(op, self, rhs, &out_shape);
        let tape = Tensor::result_tape(op.name(), &[self, rhs])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ia, ib) = (self.node_id(), rhs.node_id());
            let (sa, sb) = (self.shape.clone(), rhs.shape.clone());
            let os = out_shape.clone();
            let (da, db) = (Rc::clone(&self.data), Rc::clone(&rhs.data));
            let f: BackwardFn = Box::new(move |g: &[f64], sink: &mut GradSink| {
                let full = |vals: Vec<f64>, shape: &[usize], id: NodeId, sink: &mut GradSink| {
                    sink.add(id, reduce_to_shape(&vals, &os, shape));
                };
                match op {
                    BinOp::Add => {
                        if let Some(id) = ia {
                            full(g.to_vec(), &sa, id, sink);
                        }
                        if let Some(id) = ib {
                            full(g.to_vec(), &sb, id, sink);
                        }
                    }
                    BinOp::Sub => {
                        if let Some(id) = ia {
                            full(g.to_vec(), &sa, id, sink);
                        }
                        if let Some(id) = ib {
                            full(g.iter().map(|v| -v).collect(), &sb, id, sink);
                        }
                    }
                    BinOp::Mul => {
                        if let Some(id) = ia {
                            let gb = map2_general(g, &os, &db, &sb, &os, |x, y| x * y);
                            full(gb, &sa, id, sink);
                        }
                        if let Some(id) = ib {
                            let ga = map2_general(g, &os, &da, &sa, &os, |x, y| x * y);
                            full(ga, &sb, id, sink);
                        }
                    }
                    BinOp::Div => {
                        if let Some(id) = ia {
                            let gb = map2_general(g, &os, &db, &sb, &os, |x, y| x / y);
                            full(gb, &sa, id, sink);
                        }
                        if let Some(id) = ib {
                            // d/db (a/b) = -a / b^2
                            let num = map2_general(g, &os, &da, &sa, &os, |x, y| x * y);
                            let gb =
                                map2_general(&num, &os, &db, &sb, &os, |x, y| -x / (y * y));
                            full(gb, &sb, id, sink);
                        }
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op(op.name(), out, out_shape, tape, backward))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinOp::Sub, rhs)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinOp::Mul, rhs)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(BinOp::Div, rhs)
    }

    /// `a*x + b` in one pass; covers negation (`a=-1, b=0`), scaling and
    /// scalar shifts without broadcast overhead.
    pub fn affine(&self, a: f64, b: f64) -> Tensor {
        let out = self.data.iter().map(|&x| a * x + b).collect();
        let tape = Tensor::result_tape("affine", &[self]).expect("single input");
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let f: BackwardFn = Box::new(move |g, sink| {
                sink.add(id, g.iter().map(|v| a * v).collect());
            });
            f
        });
        Tensor::from_op("affine", out, self.shape.clone(), tape, backward)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    fn unary(
        &self,
        op: &'static str,
        fwd: impl Fn(f64) -> f64,
        // dy/dx as a function of (x, y)
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|&x| fwd(x)).collect();
        let tape = Tensor::result_tape(op, &[self]).expect("single input");
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let id = self.node_id().unwrap();
            let x = Rc::clone(&self.data);
            let y = Rc::new(out.clone());
            let f: BackwardFn = Box::new(move |g, sink| {
                let gx = g
                    .iter()
                    .zip(x.iter().zip(y.iter()))
                    .map(|(&gv, (&xv, &yv))| gv * dfdx(xv, yv))
                    .collect();
                sink.add(id, gx);
            });
            f
        });
        Tensor::from_op(op, out, self.shape.clone(), tape, backward)
    }

    /// Numerically safe logistic function; saturates cleanly for |x| large.
    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid_f64, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x >= 0.0 { 1.0 } else { 0.0 })
    }

    /// Clamp to `[lo, hi]`; gradient passes through inside the range
    /// (boundary included) and is zero outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    /// Natural log. Caller guarantees positivity (the loss path adds a tiny
    /// floor before calling).
    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    /// PReLU with one learnable slope per channel (axis 1 of a rank-3
    /// tensor, or the only axis of a rank-1 tensor).
    pub fn prelu(&self, slopes: &Tensor) -> Result<Tensor> {
        let channels = match self.shape.len() {
            3 => self.shape[1],
            1 => self.shape[0],
            r => {
                return Err(Error::invalid("prelu", format!("expected rank 1 or 3, got {r}")));
            }
        };
        if slopes.shape != [channels] {
            return Err(Error::ShapeMismatch {
                op: "prelu",
                lhs: self.shape.clone(),
                rhs: slopes.shape.clone(),
            });
        }
        let t = if self.shape.len() == 3 { self.shape[2] } else { 1 };
        let x = self.data();
        let a = slopes.data();
        let mut out = Vec::with_capacity(x.len());
        for (row_idx, row) in x.chunks_exact(t).enumerate() {
            let ac = a[row_idx % channels];
            out.extend(row.iter().map(|&v| if v >= 0.0 { v } else { ac * v }));
        }
        let tape = Tensor::result_tape("prelu", &[self, slopes])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ix, ia) = (self.node_id(), slopes.node_id());
            let xd = Rc::clone(&self.data);
            let ad = Rc::clone(&slopes.data);
            let f: BackwardFn = Box::new(move |g, sink| {
                if let Some(id) = ix {
                    let mut gx = Vec::with_capacity(xd.len());
                    for (row_idx, (xr, gr)) in
                        xd.chunks_exact(t).zip(g.chunks_exact(t)).enumerate()
                    {
                        let ac = ad[row_idx % channels];
                        gx.extend(
                            xr.iter()
                                .zip(gr)
                                .map(|(&x, &gv)| if x >= 0.0 { gv } else { ac * gv }),
                        );
                    }
                    sink.add(id, gx);
                }
                if let Some(id) = ia {
                    let ga = sink.buf(id, channels);
                    for (row_idx, (xr, gr)) in
                        xd.chunks_exact(t).zip(g.chunks_exact(t)).enumerate()
                    {
                        let slot = row_idx % channels;
                        let mut acc = 0.0;
                        for (&x, &gv) in xr.iter().zip(gr) {
                            if x < 0.0 {
                                acc += x * gv;
                            }
                        }
                        ga[slot] += acc;
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op("prelu", out, self.shape.clone(), tape, backward))
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

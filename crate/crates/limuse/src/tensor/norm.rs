//! Layer normalization over `[B, C, T]` tensors.
//!
//! `Global` normalizes each batch sample over all of (C, T) jointly.
//! `Cumulative` normalizes position `t` with statistics over (C, 0..=t)
//! only, so normalized output at `t` never depends on later inputs; this
//! is the streaming-friendly variant used by the causal configuration.

use std::rc::Rc;

use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Global,
    Cumulative,
}

impl Tensor {
    /// Layer norm with per-channel `gain` and `bias` (each `[C]`).
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, mode: NormMode) -> Result<Tensor> {
        if self.shape.len() != 3 {
            return Err(Error::invalid(
                "layer_norm",
                format!("expected rank 3, got {:?}", self.shape),
            ));
        }
        let (b, c, t) = (self.shape[0], self.shape[1], self.shape[2]);
        if t < 1 {
            return Err(Error::invalid("layer_norm", "empty time axis"));
        }
        if gain.shape != [c] || bias.shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        match mode {
            NormMode::Global => self.layer_norm_global(gain, bias, b, c, t),
            NormMode::Cumulative => self.layer_norm_cumulative(gain, bias, b, c, t),
        }
    }

    fn layer_norm_global(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        b: usize,
        c: usize,
        t: usize,
    ) -> Result<Tensor> {
        let x = self.data();
        let (gd, bd) = (gain.data(), bias.data());
        let n = (c * t) as f64;
        let mut out = vec![0.0f64; x.len()];
        let mut inv_std = vec![0.0f64; b];
        let mut means = vec![0.0f64; b];
        for bi in 0..b {
            let xs = &x[bi * c * t..(bi + 1) * c * t];
            let mu: f64 = xs.iter().sum::<f64>() / n;
            let var: f64 = xs.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            means[bi] = mu;
            inv_std[bi] = r;
            let os = &mut out[bi * c * t..(bi + 1) * c * t];
            for ci in 0..c {
                let (g, be) = (gd[ci], bd[ci]);
                for ti in 0..t {
                    os[ci * t + ti] = g * (xs[ci * t + ti] - mu) * r + be;
                }
            }
        }
        let tape = Tensor::result_tape("layer_norm", &[self, gain, bias])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ix, ig, ibs) = (self.node_id(), gain.node_id(), bias.node_id());
            let xd = Rc::clone(&self.data);
            let gaind = Rc::clone(&gain.data);
            let f: BackwardFn = Box::new(move |g, sink| {
                for bi in 0..b {
                    let xs = &xd[bi * c * t..(bi + 1) * c * t];
                    let gs = &g[bi * c * t..(bi + 1) * c * t];
                    let (mu, r) = (means[bi], inv_std[bi]);
                    if let Some(id) = ix {
                        // dX = r*(gamma*g - mean(gamma*g) - xhat*mean(gamma*g*xhat))
                        let mut s1 = 0.0f64; // sum(gamma*g)
                        let mut s2 = 0.0f64; // sum(gamma*g*xhat)
                        for ci in 0..c {
                            let ga = gaind[ci];
                            for ti in 0..t {
                                let gg = ga * gs[ci * t + ti];
                                s1 += gg;
                                s2 += gg * (xs[ci * t + ti] - mu) * r;
                            }
                        }
                        let (m1, m2) = (s1 / n, s2 / n);
                        let gx = sink.buf(id, b * c * t);
                        let gxs = &mut gx[bi * c * t..(bi + 1) * c * t];
                        for ci in 0..c {
                            let ga = gaind[ci];
                            for ti in 0..t {
                                let xhat = (xs[ci * t + ti] - mu) * r;
                                gxs[ci * t + ti] += r * (ga * gs[ci * t + ti] - m1 - xhat * m2);
                            }
                        }
                    }
                    if let Some(id) = ig {
                        let gg = sink.buf(id, c);
                        for ci in 0..c {
                            let mut acc = 0.0;
                            for ti in 0..t {
                                acc += gs[ci * t + ti] * (xs[ci * t + ti] - mu) * r;
                            }
                            gg[ci] += acc;
                        }
                    }
                    if let Some(id) = ibs {
                        let gb = sink.buf(id, c);
                        for ci in 0..c {
                            gb[ci] += gs[ci * t..(ci + 1) * t].iter().sum::<f64>();
                        }
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op("layer_norm", out, self.shape.clone(), tape, backward))
    }

    fn layer_norm_cumulative(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        b: usize,
        c: usize,
        t: usize,
    ) -> Result<Tensor> {
        let x = self.data();
        let (gd, bd) = (gain.data(), bias.data());
        let mut out = vec![0.0f64; x.len()];
        // per (b, t): mean and inverse std over channels x prefix
        let mut mu_all = vec![0.0f64; b * t];
        let mut r_all = vec![0.0f64; b * t];
        for bi in 0..b {
            let xs = &x[bi * c * t..(bi + 1) * c * t];
            let mut s1 = 0.0f64;
            let mut s2 = 0.0f64;
            for ti in 0..t {
                for ci in 0..c {
                    let v = xs[ci * t + ti];
                    s1 += v;
                    s2 += v * v;
                }
                let n = (c * (ti + 1)) as f64;
                let mu = s1 / n;
                let var = (s2 / n - mu * mu).max(0.0);
                let r = 1.0 / (var + NORM_EPS).sqrt();
                mu_all[bi * t + ti] = mu;
                r_all[bi * t + ti] = r;
                let os = &mut out[bi * c * t..(bi + 1) * c * t];
                for ci in 0..c {
                    os[ci * t + ti] = gd[ci] * (xs[ci * t + ti] - mu) * r + bd[ci];
                }
            }
        }
        let tape = Tensor::result_tape("layer_norm", &[self, gain, bias])?;
        let backward: Option<BackwardFn> = tape.as_ref().map(|_| {
            let (ix, ig, ibs) = (self.node_id(), gain.node_id(), bias.node_id());
            let xd = Rc::clone(&self.data);
            let gaind = Rc::clone(&gain.data);
            let mu_all = mu_all.clone();
            let r_all = r_all.clone();
            let f: BackwardFn = Box::new(move |g, sink| {
                for bi in 0..b {
                    let xs = &xd[bi * c * t..(bi + 1) * c * t];
                    let gs = &g[bi * c * t..(bi + 1) * c * t];
                    let mus = &mu_all[bi * t..(bi + 1) * t];
                    let rs = &r_all[bi * t..(bi + 1) * t];
                    // A_t = sum_d gamma_d g[d,t];  B_t = sum_d gamma_d g[d,t] (x[d,t]-mu_t)
                    let mut a = vec![0.0f64; t];
                    let mut bsum = vec![0.0f64; t];
                    for ci in 0..c {
                        let ga = gaind[ci];
                        for ti in 0..t {
                            let gg = ga * gs[ci * t + ti];
                            a[ti] += gg;
                            bsum[ti] += gg * (xs[ci * t + ti] - mus[ti]);
                        }
                    }
                    if let Some(id) = ix {
                        // suffix sums of the mean/variance coupling terms
                        let mut p = vec![0.0f64; t + 1];
                        let mut q = vec![0.0f64; t + 1];
                        let mut rr = vec![0.0f64; t + 1];
                        for ti in (0..t).rev() {
                            let n = (c * (ti + 1)) as f64;
                            let r3 = rs[ti] * rs[ti] * rs[ti];
                            p[ti] = p[ti + 1] + rs[ti] * a[ti] / n;
                            q[ti] = q[ti + 1] + r3 * bsum[ti] / n;
                            rr[ti] = rr[ti + 1] + r3 * bsum[ti] * mus[ti] / n;
                        }
                        let gx = sink.buf(id, b * c * t);
                        let gxs = &mut gx[bi * c * t..(bi + 1) * c * t];
                        for ci in 0..c {
                            let ga = gaind[ci];
                            for ti in 0..t {
                                let xv = xs[ci * t + ti];
                                gxs[ci * t + ti] +=
                                    ga * rs[ti] * gs[ci * t + ti] - p[ti] - xv * q[ti] + rr[ti];
                            }
                        }
                    }
                    if let Some(id) = ig {
                        let gg = sink.buf(id, c);
                        for ci in 0..c {
                            let mut acc = 0.0;
                            for ti in 0..t {
                                acc += gs[ci * t + ti] * (xs[ci * t + ti] - mus[ti]) * rs[ti];
                            }
                            gg[ci] += acc;
                        }
                    }
                    if let Some(id) = ibs {
                        let gb = sink.buf(id, c);
                        for ci in 0..c {
                            gb[ci] += gs[ci * t..(ci + 1) * t].iter().sum::<f64>();
                        }
                    }
                }
            });
            f
        });
        Ok(Tensor::from_op("layer_norm", out, self.shape.clone(), tape, backward))
    }
}

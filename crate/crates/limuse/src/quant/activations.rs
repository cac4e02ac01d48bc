//! Min-max linear activation quantization with straight-through gradients.

use std::cell::Cell;
use std::rc::Rc;

use crate::error::Result;
use crate::tensor::Tensor;

/// Per-layer activation quantizer.
///
/// Training uses the current batch's min/max and folds them into running
/// estimates (exponential moving average, momentum 0.9); inference uses
/// the running estimates. A degenerate constant tensor bypasses
/// quantization entirely.
#[derive(Debug)]
pub struct ActivationQuantizer {
    pub bits: u32,
    momentum: f64,
    running_min: Cell<f64>,
    running_max: Cell<f64>,
    initialized: Cell<bool>,
}

impl Clone for ActivationQuantizer {
    fn clone(&self) -> Self {
        ActivationQuantizer {
            bits: self.bits,
            momentum: self.momentum,
            running_min: Cell::new(self.running_min.get()),
            running_max: Cell::new(self.running_max.get()),
            initialized: Cell::new(self.initialized.get()),
        }
    }
}

impl ActivationQuantizer {
    pub fn new(bits: u32) -> Self {
        ActivationQuantizer {
            bits,
            momentum: 0.9,
            running_min: Cell::new(0.0),
            running_max: Cell::new(0.0),
            initialized: Cell::new(false),
        }
    }

    pub fn running_range(&self) -> (f64, f64) {
        (self.running_min.get(), self.running_max.get())
    }

    pub fn set_running_range(&self, min: f64, max: f64) {
        self.running_min.set(min);
        self.running_max.set(max);
        self.initialized.set(true);
    }

    /// Quantize-dequantize `x`. In training mode the batch min/max drive the
    /// grid and update the running statistics; in inference mode the stored
    /// running statistics are used unchanged.
    pub fn quantize(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let (lo, hi) = if training {
            let lo = x.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if self.initialized.get() {
                let m = self.momentum;
                self.running_min.set(m * self.running_min.get() + (1.0 - m) * lo);
                self.running_max.set(m * self.running_max.get() + (1.0 - m) * hi);
            } else {
                self.set_running_range(lo, hi);
            }
            (lo, hi)
        } else {
            self.running_range()
        };
        quantize_activations(x, lo, hi, self.bits)
    }
}

/// `Q(x) = round((x - lo)/s)` with `s = (hi - lo)/(2^p - 1)`, returned in
/// dequantized form `lo + s*Q(x)` so downstream full-precision math
/// composes. Rounding is half-to-even; codes clamp to `[0, 2^p - 1]`.
///
/// Backward is the clipped straight-through estimator: gradient passes
/// unchanged where `lo <= x <= hi` and is zero outside.
pub fn quantize_activations(x: &Tensor, lo: f64, hi: f64, bits: u32) -> Result<Tensor> {
    if hi <= lo {
        // degenerate constant tensor: bypass
        return Ok(x.clone());
    }
    let steps = ((1u64 << bits) - 1) as f64;
    let s = (hi - lo) / steps;
    let out: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let code = ((v - lo) / s).round_ties_even().clamp(0.0, steps);
            lo + s * code
        })
        .collect();
    let tape = Tensor::result_tape("quantize_activations", &[x])?;
    let backward: Option<crate::tensor::BackwardFn> = tape.as_ref().map(|_| {
        let id = x.node_id().unwrap();
        let xd = Rc::clone(&x.data);
        let f: crate::tensor::BackwardFn = Box::new(move |g, sink| {
            let gx = xd
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v >= lo && v <= hi { gv } else { 0.0 })
                .collect();
            sink.add(id, gx);
        });
        f
    });
    Ok(Tensor::from_op("quantize_activations", out, x.shape().to_vec(), tape, backward))
}

/// Integer code of a single value on the min-max grid (for tests and
/// size accounting).
pub fn activation_code(v: f64, lo: f64, hi: f64, bits: u32) -> u64 {
    let steps = ((1u64 << bits) - 1) as f64;
    let s = (hi - lo) / steps;
    ((v - lo) / s).round_ties_even().clamp(0.0, steps) as u64
}

//! Weight and activation quantization.
//!
//! Weights use a layer-wise non-uniform quantizer: the hard staircase is a
//! sum of unit steps over an integer level set, and training replaces each
//! step with a temperature-sharpened sigmoid so the whole thing stays
//! differentiable in the input and in the learnable input/output scales.
//! Biases of the staircase come from K-means cluster midpoints and stay
//! fixed. Activations use plain min-max linear quantization with a
//! straight-through estimator.

mod activations;
mod kmeans;
mod pack;

pub use activations::ActivationQuantizer;
pub use kmeans::kmeans_centers;
pub use pack::{pack_codes, unpack_codes};

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered integer level set `gamma`, e.g. `{-3..3}` for 3-bit weights.
///
/// A `w`-bit set holds `2^w - 1` symmetric levels, so one binary code
/// point per layer goes unused; packing still uses `w` bits per weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantLevelSet {
    gamma: Vec<i64>,
}

impl QuantLevelSet {
    /// Symmetric integer levels for a bit width: `{-(2^(w-1)-1) ..= 2^(w-1)-1}`.
    pub fn for_bits(bits: u32) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return Err(Error::invalid("levels", format!("unsupported bit width {bits}")));
        }
        let m = (1i64 << (bits - 1)) - 1;
        Ok(QuantLevelSet { gamma: (-m..=m).collect() })
    }

    pub fn from_levels(gamma: Vec<i64>) -> Result<Self> {
        if gamma.len() < 2 || gamma.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("levels", "level set must be strictly ascending"));
        }
        Ok(QuantLevelSet { gamma })
    }

    pub fn levels(&self) -> &[i64] {
        &self.gamma
    }

    /// Number of unit steps, `|gamma| - 1`.
    pub fn num_steps(&self) -> usize {
        self.gamma.len() - 1
    }

    /// Step sizes `s_i = gamma_{i+1} - gamma_i`.
    pub fn steps(&self) -> Vec<f64> {
        self.gamma.windows(2).map(|w| (w[1] - w[0]) as f64).collect()
    }

    /// Global offset `o = (1/2) * sum_i s_i`.
    pub fn offset(&self) -> f64 {
        0.5 * (self.gamma[self.gamma.len() - 1] - self.gamma[0]) as f64
    }

    /// Bits needed to store a level index.
    pub fn code_bits(&self) -> u32 {
        usize::BITS - (self.gamma.len() - 1).leading_zeros()
    }
}

/// Per-layer weight quantizer state.
///
/// `biases` are fixed after initialization; the scales are learnable and
/// kept positive by construction (the training path parameterizes them as
/// exponentials of unconstrained values).
#[derive(Clone, Debug)]
pub struct QuantizerParams {
    pub levels: QuantLevelSet,
    pub biases: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl QuantizerParams {
    pub fn new(levels: QuantLevelSet, biases: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if biases.len() != levels.num_steps() {
            return Err(Error::invalid(
                "quantizer",
                format!("{} biases for {} steps", biases.len(), levels.num_steps()),
            ));
        }
        if biases.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("quantizer", "biases must be strictly ascending"));
        }
        if alpha <= 0.0 || beta <= 0.0 {
            return Err(Error::invalid("quantizer", "scales must be positive"));
        }
        Ok(QuantizerParams { levels, biases, alpha, beta })
    }

    /// Uniform mid-rise biases (midpoints between consecutive levels in
    /// input space); handy default before K-means initialization.
    pub fn uniform(levels: QuantLevelSet) -> Self {
        let biases = levels.levels().windows(2).map(|w| 0.5 * (w[0] + w[1]) as f64).collect();
        QuantizerParams { levels, biases, alpha: 1.0, beta: 1.0 }
    }
}

/// Initialize a layer quantizer from its full-precision weights:
/// K-means the weights into `n+1` ranked centers, place the step biases at
/// consecutive-center midpoints, and range-match the output scale so the
/// quantizer initially spans the weight range. `beta` starts at 1 so the
/// biases live in raw weight space.
pub fn init_quantizer(
    weights: &[f64],
    levels: &QuantLevelSet,
    seed: u64,
) -> Result<QuantizerParams> {
    let k = levels.num_steps() + 1;
    let centers = kmeans_centers(weights, k, seed)?;
    let biases: Vec<f64> = centers.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let g = levels.levels();
    let gamma_span = (g[g.len() - 1] - g[0]) as f64;
    let alpha = ((centers[k - 1] - centers[0]) / gamma_span).max(1e-12);
    QuantizerParams::new(levels.clone(), biases, alpha, 1.0)
}

/// Hard staircase quantizer: a combination of unit steps, exactly on the
/// grid `alpha * gamma`, monotone nondecreasing in `x`.
pub fn ideal_quantize(x: f64, q: &QuantizerParams) -> f64 {
    let steps = q.levels.steps();
    let mut acc = 0.0;
    for (s, b) in steps.iter().zip(&q.biases) {
        if q.beta * x - b >= 0.0 {
            acc += s;
        }
    }
    q.alpha * (acc - q.levels.offset())
}

/// Level index (code) of the hard-quantized value: the number of unit
/// steps crossed, in `0..levels.len()`.
pub fn quantize_code(x: f64, q: &QuantizerParams) -> u16 {
    let mut crossed = 0u16;
    for b in &q.biases {
        if q.beta * x - b >= 0.0 {
            crossed += 1;
        }
    }
    crossed
}

/// Value represented by a code: `alpha * gamma[code]`.
pub fn dequantize_code(code: u16, q: &QuantizerParams) -> f64 {
    q.alpha * q.levels.levels()[code as usize] as f64
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Differentiable soft quantizer:
/// `y = alpha * (sum_i s_i * sigmoid(T (beta x - b_i)) - o)`.
///
/// `alpha` and `beta` are `[1]` tensors so gradients reach the learnable
/// scales; with untracked scalars this is a plain function of `x`.
/// As `T` grows the output converges to [`ideal_quantize`] everywhere
/// except at the bias points, where each sigmoid contributes exactly half
/// a step.
pub fn soft_quantize(
    x: &Tensor,
    alpha: &Tensor,
    beta: &Tensor,
    levels: &QuantLevelSet,
    biases: &[f64],
    temperature: f64,
) -> Result<Tensor> {
    if alpha.numel() != 1 || beta.numel() != 1 {
        return Err(Error::invalid("soft_quantize", "alpha and beta must be scalars"));
    }
    if temperature <= 0.0 {
        return Err(Error::invalid("soft_quantize", "temperature must be positive"));
    }
    if biases.len() != levels.num_steps() {
        return Err(Error::invalid("soft_quantize", "bias count != step count"));
    }
    let (a, b) = (alpha.item(), beta.item());
    let steps = levels.steps();
    let offset = levels.offset();
    let t = temperature;
    let xd = x.data();

    let mut out = Vec::with_capacity(xd.len());
    for &xv in xd {
        let mut acc = 0.0;
        for (s, bi) in steps.iter().zip(biases) {
            acc += s * sigmoid(t * (b * xv - bi));
        }
        out.push(a * (acc - offset));
    }

    let tape = Tensor::result_tape("soft_quantize", &[x, alpha, beta])?;
    let backward: Option<crate::tensor::BackwardFn> = tape.as_ref().map(|_| {
        let (ix, ia, ib) = (x.node_id(), alpha.node_id(), beta.node_id());
        let xd = Rc::clone(&x.data);
        let yd = out.clone();
        let steps = steps.clone();
        let biases = biases.to_vec();
        let f: crate::tensor::BackwardFn = Box::new(move |g, sink| {
            let mut gx = ix.map(|_| vec![0.0f64; xd.len()]);
            let mut ga = 0.0f64;
            let mut gb = 0.0f64;
            for (j, (&xv, &gv)) in xd.iter().zip(g).enumerate() {
                // sum_i s_i sigma'(T(beta x - b_i))
                let mut dsig = 0.0;
                for (s, bi) in steps.iter().zip(&biases) {
                    let sg = sigmoid(t * (b * xv - bi));
                    dsig += s * sg * (1.0 - sg);
                }
                if let Some(gxv) = gx.as_mut() {
                    gxv[j] = gv * a * dsig * t * b;
                }
                if ia.is_some() {
                    ga += gv * (yd[j] / a);
                }
                if ib.is_some() {
                    gb += gv * a * dsig * t * xv;
                }
            }
            if let (Some(id), Some(gxv)) = (ix, gx) {
                sink.add(id, gxv);
            }
            if let Some(id) = ia {
                sink.add(id, vec![ga]);
            }
            if let Some(id) = ib {
                sink.add(id, vec![gb]);
            }
        });
        f
    });
    Ok(Tensor::from_op("soft_quantize", out, x.shape().to_vec(), tape, backward))
}

/// Soft quantization with fixed scalar scales.
pub fn soft_quantize_plain(x: &Tensor, q: &QuantizerParams, temperature: f64) -> Result<Tensor> {
    soft_quantize(
        x,
        &Tensor::scalar(q.alpha),
        &Tensor::scalar(q.beta),
        &q.levels,
        &q.biases,
        temperature,
    )
}

/// Temperature schedule `T(epoch) = T0 * epoch`, epoch starting at 1.
#[derive(Clone, Copy, Debug)]
pub struct TemperatureSchedule {
    pub t0: f64,
}

impl TemperatureSchedule {
    pub fn new(t0: f64) -> Self {
        TemperatureSchedule { t0 }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        debug_assert!(epoch >= 1);
        self.t0 * epoch as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_params() -> QuantizerParams {
        // gamma = {-3..3}, alpha = beta = 1, biases at half-integers
        QuantizerParams::uniform(QuantLevelSet::for_bits(3).unwrap())
    }

    #[test]
    fn three_bit_level_set_shape() {
        let l = QuantLevelSet::for_bits(3).unwrap();
        assert_eq!(l.levels(), &[-3, -2, -1, 0, 1, 2, 3]);
        assert_eq!(l.num_steps(), 6);
        assert_eq!(l.offset(), 3.0);
        assert_eq!(l.code_bits(), 3);
    }

    #[test]
    fn ideal_saturates_at_extremes() {
        let q = paper_params();
        assert_eq!(ideal_quantize(-10.0, &q), -3.0);
        assert_eq!(ideal_quantize(10.0, &q), 3.0);
    }

    #[test]
    fn ideal_mid_value_crosses_four_steps() {
        // x = 0.7: steps at -2.5,-1.5,-0.5,0.5 crossed -> 4 - offset 3 = 1
        let q = paper_params();
        assert_eq!(ideal_quantize(0.7, &q), 1.0);
        assert_eq!(quantize_code(0.7, &q), 4);
        assert_eq!(dequantize_code(4, &q), 1.0);
    }

    #[test]
    fn ideal_is_monotone_with_exact_codomain() {
        let q = paper_params();
        let grid: Vec<f64> = (0..2001).map(|i| -5.0 + i as f64 * 0.005).collect();
        let mut prev = f64::NEG_INFINITY;
        for &x in &grid {
            let y = ideal_quantize(x, &q);
            assert!(y >= prev, "not monotone at {x}");
            assert!(
                q.levels.levels().iter().any(|&g| y == q.alpha * g as f64),
                "value {y} not on the alpha*gamma grid"
            );
            prev = y;
        }
    }

    #[test]
    fn soft_at_bias_point_contributes_half_step() {
        // x = 0.5 is exactly b_4: 3 steps saturated + one half = 3.5 - 3 = 0.5
        let q = paper_params();
        let x = Tensor::scalar(0.5);
        let y = soft_quantize_plain(&x, &q, 1000.0).unwrap();
        assert!((y.item() - 0.5).abs() < 1e-6, "got {}", y.item());
    }

    #[test]
    fn soft_approaches_ideal_at_high_temperature() {
        let q = paper_params();
        let x = Tensor::scalar(0.7);
        let y = soft_quantize_plain(&x, &q, 1000.0).unwrap();
        assert!((y.item() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn alpha_scales_output_linearly() {
        let q = paper_params();
        let mut q2 = q.clone();
        q2.alpha = 2.0;
        let xs = Tensor::from_vec(vec![-2.0, -0.3, 0.4, 1.7], &[4]).unwrap();
        let y1 = soft_quantize_plain(&xs, &q, 25.0).unwrap();
        let y2 = soft_quantize_plain(&xs, &q2, 25.0).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_inference_gap_shrinks_with_temperature() {
        let q = paper_params();
        let xs: Vec<f64> = (0..101).map(|i| -4.0 + i as f64 * 0.08).collect();
        let xt = Tensor::from_vec(xs.clone(), &[xs.len()]).unwrap();
        let gap = |t: f64| -> f64 {
            let y = soft_quantize_plain(&xt, &q, t).unwrap();
            xs.iter()
                .zip(y.data())
                .map(|(&x, &s)| (ideal_quantize(x, &q) - s).abs())
                .fold(0.0, f64::max)
        };
        let (g5, g50, g500) = (gap(5.0), gap(50.0), gap(500.0));
        assert!(g5 > g50 && g50 > g500, "gaps {g5} {g50} {g500} not decreasing");
    }

    #[test]
    fn init_quantizer_on_symmetric_weights() {
        let mut rng = crate::rng::Rng::new(3);
        let mut w: Vec<f64> = Vec::new();
        for _ in 0..200 {
            let v = rng.normal() * 0.5;
            w.push(v);
            w.push(-v);
        }
        let q = init_quantizer(&w, &QuantLevelSet::for_bits(3).unwrap(), 1).unwrap();
        // biases come out symmetric around zero within k-means tolerance
        let n = q.biases.len();
        for i in 0..n / 2 {
            assert!(
                (q.biases[i] + q.biases[n - 1 - i]).abs() < 0.05,
                "biases not symmetric: {:?}",
                q.biases
            );
        }
        assert!(q.alpha > 0.0 && q.beta == 1.0);
    }

    #[test]
    fn init_quantizer_constant_weights_errors() {
        let w = vec![0.25; 64];
        assert!(init_quantizer(&w, &QuantLevelSet::for_bits(3).unwrap(), 1).is_err());
    }

    #[test]
    fn reduced_two_level_midpoint_is_zero() {
        // centers +-0.9667 with the 1-step set {-1, 1} -> single bias at 0
        let w = vec![-1.0, -1.0, -0.9, 0.9, 1.0, 1.0];
        let levels = QuantLevelSet::from_levels(vec![-1, 1]).unwrap();
        let q = init_quantizer(&w, &levels, 7).unwrap();
        assert_eq!(q.biases.len(), 1);
        assert!(q.biases[0].abs() < 1e-9, "midpoint {}", q.biases[0]);
    }

    #[test]
    fn well_separated_centers_map_to_distinct_levels() {
        // clusters at -3,-2,-1,0,1,2,3 (scaled by 0.4): after init, each
        // cluster center lands on its own level
        let mut w = Vec::new();
        for c in -3..=3 {
            for j in 0..20 {
                w.push(0.4 * c as f64 + 0.004 * (j as f64 - 10.0));
            }
        }
        let levels = QuantLevelSet::for_bits(3).unwrap();
        let q = init_quantizer(&w, &levels, 5).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for c in -3..=3 {
            seen.insert(quantize_code(0.4 * c as f64, &q));
        }
        assert_eq!(seen.len(), 7, "cluster centers collided: {seen:?}");
    }
}

//! Finite-difference gradient checking.
//!
//! Central differences at `h = 1e-5` in f64 resolve gradients to roughly
//! 1e-10 absolute, far below the 1e-4 relative tolerance used throughout
//! the test suites. The numeric side re-evaluates the same graph builder
//! on untracked tensors, so it shares no code path with the tape.

use crate::error::Result;
use crate::tensor::{Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error with a small floor so near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compare analytic gradients of `build` against central finite differences
/// for every element of every input. `build` must return a scalar tensor.
///
/// Returns the maximum relative error over all elements.
pub fn max_rel_err<F>(inputs: &[(Vec<f64>, Vec<usize>)], build: F) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    // Analytic pass.
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| Tensor::leaf_from_vec(&tape, d.clone(), s))
        .collect::<Result<_>>()?;
    let loss = build(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    // Numeric pass.
    let eval = |datas: &[Vec<f64>]| -> Result<f64> {
        let ts: Vec<Tensor> = datas
            .iter()
            .zip(inputs)
            .map(|(d, (_, s))| Tensor::from_vec(d.clone(), s))
            .collect::<Result<_>>()?;
        Ok(build(&ts)?.item())
    };

    let mut datas: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut worst = 0.0f64;
    for i in 0..datas.len() {
        for j in 0..datas[i].len() {
            let orig = datas[i][j];
            datas[i][j] = orig + FD_STEP;
            let fp = eval(&datas)?;
            datas[i][j] = orig - FD_STEP;
            let fm = eval(&datas)?;
            datas[i][j] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    Ok(worst)
}

/// Scalar projection of a tensor against a fixed pseudo-random direction,
/// turning any output into a scalar loss that exercises the whole Jacobian.
pub fn project(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = crate::rng::Rng::new(seed);
    let proj = Tensor::from_vec(rng.fill_uniform(t.numel(), -1.0, 1.0), t.shape())?;
    t.mul(&proj).map(|p| p.sum_all())
}

//! Separation quality metrics: SI-SDR, SDR and their improvements.

use crate::error::{Error, Result};

/// Cap applied when the error term vanishes (perfect reconstruction up to
/// scale); keeps reported numbers finite.
pub const METRIC_CAP_DB: f64 = 80.0;

fn check_pair(op: &'static str, est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::invalid(
            op,
            format!("length mismatch: {} vs {}", est.len(), reference.len()),
        ));
    }
    if est.is_empty() {
        return Err(Error::invalid(op, "empty signals"));
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB:
/// project the estimate onto the reference, then take the energy ratio of
/// the projection to the residual. Errors on an all-zero reference.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair("si_sdr", est, reference)?;
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::invalid("si_sdr", "reference signal is all zero"));
    }
    let dot: f64 = est.iter().zip(reference).map(|(e, r)| e * r).sum();
    let scale = dot / ref_energy;
    let target_energy = scale * scale * ref_energy;
    let noise_energy: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let n = e - scale * r;
            n * n
        })
        .sum();
    Ok(ratio_db(target_energy, noise_energy))
}

/// Plain energy-ratio SDR in dB: `10 log10(||s||^2 / ||s - s_hat||^2)`.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair("sdr", est, reference)?;
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::invalid("sdr", "reference signal is all zero"));
    }
    let err_energy: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r) * (e - r))
        .sum();
    Ok(ratio_db(ref_energy, err_energy))
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return METRIC_CAP_DB;
    }
    if num <= 0.0 {
        return -METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

/// Improvement of SI-SDR over the unprocessed mixture channel.
pub fn si_sdr_improvement(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mixture, reference)?)
}

/// Improvement of SDR over the unprocessed mixture channel.
pub fn sdr_improvement(est: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mixture, reference)?)
}

/// Mean and (population) standard deviation of a metric over samples.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return MetricSummary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary { mean, std: var.sqrt(), count: values.len() }
    }
}

impl std::fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:+.2} ± {:.2} dB", self.mean, self.std)
    }
}

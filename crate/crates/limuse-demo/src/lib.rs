//! Browser demo bindings: interactive quantizer curves, compression
//! accounting across group counts, and synthetic mixture exploration.
//!
//! Compile to `wasm32-unknown-unknown` and run `wasm-bindgen` to produce
//! the glue consumed by `www/index.html` (see `build-demo.sh`).

use wasm_bindgen::prelude::*;

use limuse::accounting::AccountingReport;
use limuse::metrics;
use limuse::model::{LiMuseModel, ModelConfig};
use limuse::nn::ParamStore;
use limuse::quant::{
    ideal_quantize, init_quantizer, soft_quantize_plain, QuantLevelSet, QuantizerParams,
};
use limuse::rng::Rng;
use limuse::synth::{make_mixture, stub_visual, SynthConfig, SyntheticSpeaker, MAX_SPEAKERS};
use limuse::tensor::Tensor;

/// Soft and hard quantizer curves over a symmetric input range.
#[wasm_bindgen]
pub struct QuantCurves {
    xs: Vec<f64>,
    soft: Vec<f64>,
    hard: Vec<f64>,
    biases: Vec<f64>,
}

#[wasm_bindgen]
impl QuantCurves {
    #[wasm_bindgen(getter)]
    pub fn xs(&self) -> Vec<f64> {
        self.xs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn soft(&self) -> Vec<f64> {
        self.soft.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn hard(&self) -> Vec<f64> {
        self.hard.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn biases(&self) -> Vec<f64> {
        self.biases.clone()
    }
}

/// Evaluate the temperature-sharpened soft quantizer against the hard
/// staircase. With `kmeans_biases` the step positions come from K-means
/// clustering of a synthetic weight sample instead of uniform midpoints,
/// showing the layer-adaptive non-uniform staircase.
#[wasm_bindgen]
pub fn quantizer_curves(
    bits: u32,
    temperature: f64,
    alpha: f64,
    beta: f64,
    kmeans_biases: bool,
    points: usize,
) -> Result<QuantCurves, JsError> {
    let levels = QuantLevelSet::for_bits(bits).map_err(to_js)?;
    let params = if kmeans_biases {
        // bimodal-ish weight blob so the clusters are visibly non-uniform
        let mut rng = Rng::new(0xDE_340);
        let mut w: Vec<f64> = rng.fill_normal(600).iter().map(|v| v * 0.5).collect();
        w.extend(rng.fill_normal(200).iter().map(|v| 1.2 + v * 0.2));
        let q = init_quantizer(&w, &levels, 7).map_err(to_js)?;
        QuantizerParams::new(levels, q.biases, alpha.max(1e-6), beta.max(1e-6)).map_err(to_js)?
    } else {
        let mut q = QuantizerParams::uniform(levels);
        q.alpha = alpha.max(1e-6);
        q.beta = beta.max(1e-6);
        q
    };
    let n = points.clamp(16, 20_000);
    let range = 5.0;
    let xs: Vec<f64> = (0..n).map(|i| -range + 2.0 * range * i as f64 / (n - 1) as f64).collect();
    let xt = Tensor::from_vec(xs.clone(), &[n]).map_err(to_js)?;
    let soft = soft_quantize_plain(&xt, &params, temperature.max(1e-3)).map_err(to_js)?;
    let hard: Vec<f64> = xs.iter().map(|&x| ideal_quantize(x, &params)).collect();
    Ok(QuantCurves { xs, soft: soft.data().to_vec(), hard, biases: params.biases.clone() })
}

fn to_js(e: limuse::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Accounting summary for one configuration, as a flat JSON object.
#[wasm_bindgen]
pub fn accounting_json(k: usize, use_context_codec: bool, seconds: f64) -> Result<String, JsError> {
    let cfg = ModelConfig { k, use_context_codec, ..Default::default() };
    cfg.validate().map_err(to_js)?;
    let mut store = ParamStore::new();
    let model = LiMuseModel::build(&mut store, &cfg, 0).map_err(to_js)?;
    let rows = model.layer_rows(&store, seconds).map_err(to_js)?;
    let fp = AccountingReport::new(rows.clone(), None, seconds);
    let q = AccountingReport::new(rows, Some(cfg.w_q), seconds);
    Ok(format!(
        concat!(
            "{{\"k\":{},\"codec\":{},\"params\":{},\"gmacs\":{:.4},",
            "\"mb_fp32\":{:.4},\"mb_q\":{:.4}}}"
        ),
        k,
        use_context_codec,
        fp.total_params(),
        fp.total_macs() / 1e9,
        fp.total_bytes() as f64 / 1e6,
        q.total_bytes() as f64 / 1e6,
    ))
}

/// A generated two-speaker mixture plus metadata for plotting.
#[wasm_bindgen]
pub struct MixtureDemo {
    mixture: Vec<f64>,
    target: Vec<f64>,
    interferer: Vec<f64>,
    envelope: Vec<f64>,
    mixture_si_sdr: f64,
    snr_db: f64,
}

#[wasm_bindgen]
impl MixtureDemo {
    /// Channel-0 mixture samples.
    #[wasm_bindgen(getter)]
    pub fn mixture(&self) -> Vec<f64> {
        self.mixture.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn interferer(&self) -> Vec<f64> {
        self.interferer.clone()
    }

    /// Per-video-frame norms of the visual cue (the target envelope).
    #[wasm_bindgen(getter)]
    pub fn envelope(&self) -> Vec<f64> {
        self.envelope.clone()
    }

    /// SI-SDR of the raw mixture against the target, dB.
    #[wasm_bindgen(getter)]
    pub fn mixture_si_sdr(&self) -> f64 {
        self.mixture_si_sdr
    }

    #[wasm_bindgen(getter)]
    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }
}

#[wasm_bindgen]
pub fn max_speakers() -> u32 {
    MAX_SPEAKERS
}

/// Deterministically synthesize a mixture of two speakers at a given SNR.
#[wasm_bindgen]
pub fn mixture_demo(
    speaker_a: u32,
    speaker_b: u32,
    snr_db: f64,
    seconds: f64,
    seed: u64,
) -> Result<MixtureDemo, JsError> {
    let cfg = SynthConfig::default();
    let a = SyntheticSpeaker::new(speaker_a).map_err(to_js)?;
    let b = SyntheticSpeaker::new(speaker_b).map_err(to_js)?;
    let m = make_mixture(&cfg, &a, &b, snr_db.clamp(-5.0, 5.0), seconds.clamp(0.2, 3.0), seed)
        .map_err(to_js)?;
    let si = metrics::si_sdr(&m.mixture[..m.samples], &m.target).map_err(to_js)?;
    let (vis, frames) = stub_visual(speaker_a, &m.target, &cfg, seconds.clamp(0.2, 3.0));
    let d = cfg.d_face;
    let envelope: Vec<f64> = (0..frames)
        .map(|f| (0..d).map(|di| vis[di * frames + f] * vis[di * frames + f]).sum::<f64>().sqrt())
        .collect();
    Ok(MixtureDemo {
        mixture: m.mixture[..m.samples].to_vec(),
        target: m.target,
        interferer: m.interferer,
        envelope,
        mixture_si_sdr: si,
        snr_db: m.snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_sane() {
        let c = quantizer_curves(3, 1000.0, 1.0, 1.0, false, 512).unwrap();
        assert_eq!(c.xs.len(), 512);
        // hard curve saturates at +-3 for the 3-bit set
        assert_eq!(c.hard[0], -3.0);
        assert_eq!(*c.hard.last().unwrap(), 3.0);
        assert_eq!(c.biases.len(), 6);
    }

    #[test]
    fn accounting_json_is_flat_json() {
        let s = accounting_json(16, true, 1.0).unwrap();
        assert!(s.starts_with('{') && s.ends_with('}'));
        assert!(s.contains("\"params\""));
    }

    #[test]
    fn mixture_demo_generates() {
        let m = mixture_demo(0, 5, 2.5, 0.3, 42).unwrap();
        assert_eq!(m.mixture.len(), 4800);
        assert!((m.snr_db - 2.5).abs() < 1e-12);
        assert!(m.mixture_si_sdr.is_finite());
        assert!(!m.envelope.is_empty());
    }
}

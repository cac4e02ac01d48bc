//! Architecture hyperparameters.

use crate::error::{Error, Result};

/// Every knob of the extraction network. Defaults follow the reference
/// hyperparameter table; `k` (group count) and the lightweight-design
/// switches select the model family (vanilla / GC / GC+CC).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder channels.
    pub n: usize,
    /// Encoder filter length in audio samples.
    pub l: usize,
    /// Kernel size inside the conv blocks.
    pub p: usize,
    /// Repeats in the audio block.
    pub r_a: usize,
    /// Repeats in the fusion block.
    pub r_f: usize,
    /// Context size in frames.
    pub s: usize,
    /// Weight quantization bits.
    pub w_q: u32,
    /// Activation quantization bits.
    pub a_q: u32,
    /// Temperature increment per epoch.
    pub t0: f64,
    /// Group count.
    pub k: usize,
    /// TCN blocks per repeat (dilations 2^0 .. 2^(x-1)).
    pub x: usize,
    /// Microphone channels.
    pub mics: usize,
    /// Speaker-embedding dimension.
    pub u: usize,
    /// Face-embedding dimension.
    pub d_face: usize,
    /// Video frame rate.
    pub fps: usize,
    pub sample_rate: usize,
    /// Causal convolutions + cumulative normalization.
    pub causal: bool,
    /// Compress sequences with the context codec.
    pub use_context_codec: bool,
    /// GC-TCN depth inside the codec's encoder and decoder stacks.
    pub codec_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 128,
            l: 32,
            p: 3,
            r_a: 2,
            r_f: 1,
            s: 32,
            w_q: 3,
            a_q: 8,
            t0: 5.0,
            k: 16,
            x: 8,
            mics: 2,
            u: 512,
            d_face: 256,
            fps: 25,
            sample_rate: 16000,
            causal: false,
            use_context_codec: true,
            codec_depth: 2,
        }
    }
}

impl ModelConfig {
    /// Full-width baseline: one group, no context codec.
    pub fn vanilla() -> Self {
        ModelConfig { k: 1, use_context_codec: false, ..Default::default() }
    }

    /// Group communication only (no codec).
    pub fn gc(k: usize) -> Self {
        ModelConfig { k, use_context_codec: false, ..Default::default() }
    }

    /// Group communication plus context codec.
    pub fn gc_cc(k: usize) -> Self {
        ModelConfig { k, ..Default::default() }
    }

    /// Desk-scale configuration used by the smoke-training suite.
    pub fn tiny() -> Self {
        ModelConfig { n: 64, x: 4, k: 8, ..Default::default() }
    }

    /// Encoder hop: half the filter length (50% frame overlap).
    pub fn encoder_stride(&self) -> usize {
        self.l / 2
    }

    /// Fusion width after concatenating the three streams.
    pub fn fusion_width(&self) -> usize {
        3 * self.n
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.l == 0 || self.k == 0 || self.x == 0 || self.mics == 0 {
            return err("n, l, k, x, mics must be positive".into());
        }
        if self.l % 2 != 0 {
            return err(format!("filter length l={} must be even", self.l));
        }
        if self.n % self.k != 0 {
            return err(format!("n={} not divisible by group count k={}", self.n, self.k));
        }
        if self.fusion_width() % self.k != 0 {
            return err(format!("3n={} not divisible by k={}", self.fusion_width(), self.k));
        }
        if self.use_context_codec && (self.s < 2 || self.s % 2 != 0) {
            return err(format!("context size s={} must be even and >= 2", self.s));
        }
        if self.p < 1 {
            return err("kernel p must be >= 1".into());
        }
        if !(2..=8).contains(&self.w_q) || !(2..=16).contains(&self.a_q) {
            return err(format!("quantization bits w_q={} a_q={} out of range", self.w_q, self.a_q));
        }
        Ok(())
    }

    /// Frame count produced by the encoder for a sample count (input is
    /// zero-padded on the right so the framing fits exactly).
    pub fn frames_for_samples(&self, samples: usize) -> Result<usize> {
        if samples < self.l {
            return Err(Error::SequenceTooShort {
                op: "encode_audio",
                len: samples,
                needed: self.l,
            });
        }
        let stride = self.encoder_stride();
        Ok((samples - self.l).div_ceil(stride) + 1)
    }

    /// Padded sample count corresponding to [`Self::frames_for_samples`].
    pub fn padded_samples(&self, samples: usize) -> Result<usize> {
        let frames = self.frames_for_samples(samples)?;
        Ok((frames - 1) * self.encoder_stride() + self.l)
    }
}

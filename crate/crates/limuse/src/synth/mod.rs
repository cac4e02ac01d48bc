//! Deterministic synthetic two-speaker mixtures.
//!
//! Speakers are harmonic voices with mutually disjoint fundamental bands,
//! speaker-specific spectral rolloff, and syllable-like on/off envelopes.
//! Mixtures are exact-SNR sums with a per-source integer-sample delay on
//! the second channel standing in for a spatial cue. Voiceprint and face
//! embeddings are stubs: a deterministic unit vector per speaker, and a
//! per-frame energy-modulated speaker vector (the frame magnitudes carry
//! the target's envelope, which is the genuinely informative part).
//!
//! Everything is driven by the counter-based [`Rng`], so a master seed
//! reproduces the dataset bit-identically on any platform.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Hyperparameters of the synthetic data distribution.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub sample_rate: usize,
    pub fps: usize,
    /// Voiceprint embedding dimension.
    pub u: usize,
    /// Face embedding dimension.
    pub d_face: usize,
    /// SNR range for mixing, dB.
    pub snr_range: (f64, f64),
    /// Maximum inter-channel delay of the spatial stub, in samples.
    pub max_delay: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 16000,
            fps: 25,
            u: 512,
            d_face: 256,
            snr_range: (-5.0, 5.0),
            max_delay: 8,
        }
    }
}

/// A synthetic voice: a fundamental-frequency band disjoint from every
/// other speaker's, plus a harmonic amplitude profile.
#[derive(Clone, Debug)]
pub struct SyntheticSpeaker {
    pub id: u32,
    pub f0_lo: f64,
    pub f0_hi: f64,
    pub rolloff: f64,
    pub num_harmonics: usize,
}

/// Largest speaker id with a reserved fundamental band.
pub const MAX_SPEAKERS: u32 = 24;

impl SyntheticSpeaker {
    /// Speaker `id`'s voice. Bands are log-spaced over 80..480 Hz with
    /// gaps, so distinct ids never overlap.
    pub fn new(id: u32) -> Result<Self> {
        if id >= MAX_SPEAKERS {
            return Err(Error::Data(format!(
                "speaker id {id} out of range (0..{MAX_SPEAKERS})"
            )));
        }
        let ratio = (480.0f64 / 80.0).powf(1.0 / MAX_SPEAKERS as f64);
        let center = 80.0 * ratio.powi(id as i32) * ratio.sqrt();
        let mut traits_rng = Rng::new(0x5EED_0000 + id as u64);
        Ok(SyntheticSpeaker {
            id,
            f0_lo: center * 0.97,
            f0_hi: center * 1.03,
            rolloff: traits_rng.range(0.8, 1.4),
            num_harmonics: 6 + traits_rng.below(5),
        })
    }
}

/// One syllable-gated harmonic utterance, RMS-normalized to 0.15.
pub fn synth_utterance(speaker: &SyntheticSpeaker, seconds: f64, seed: u64) -> Vec<f64> {
    let sr = 16000.0;
    let n = (seconds * sr).round() as usize;
    let mut rng = Rng::new(seed ^ ((speaker.id as u64) << 32));

    // syllable envelope: 120-260 ms segments, voiced with prob 0.75,
    // 15 ms raised-cosine ramps; the first syllable is always voiced
    let ramp = (0.015 * sr) as usize;
    let mut envelope = vec![0.0f64; n];
    let mut pos = 0usize;
    let mut first = true;
    while pos < n {
        let seg_len = (rng.range(0.12, 0.26) * sr) as usize;
        let end = (pos + seg_len).min(n);
        let voiced = first || rng.uniform() < 0.75;
        first = false;
        if voiced {
            let level = rng.range(0.55, 1.0);
            for i in pos..end {
                let into = i - pos;
                let from_end = end - i;
                let mut w = level;
                if into < ramp {
                    w *= 0.5 * (1.0 - (std::f64::consts::PI * into as f64 / ramp as f64).cos());
                }
                if from_end < ramp {
                    w *= 0.5
                        * (1.0 - (std::f64::consts::PI * from_end as f64 / ramp as f64).cos());
                }
                envelope[i] = w;
            }
        }
        pos = end;
    }

    // fundamental trajectory: slow vibrato inside the speaker's band
    let center = 0.5 * (speaker.f0_lo + speaker.f0_hi);
    let half_band = 0.5 * (speaker.f0_hi - speaker.f0_lo);
    let vib_rate = rng.range(2.5, 5.5);
    let vib_phase = rng.range(0.0, std::f64::consts::TAU);

    let harmonics = speaker.num_harmonics;
    let mut amp = Vec::with_capacity(harmonics);
    let mut phase = Vec::with_capacity(harmonics);
    for h in 1..=harmonics {
        amp.push(1.0 / (h as f64).powf(speaker.rolloff));
        phase.push(rng.range(0.0, std::f64::consts::TAU));
    }

    let mut wave = vec![0.0f64; n];
    for (i, w) in wave.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f0 = center + half_band * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin();
        let mut acc = 0.0;
        for (h, (a, ph)) in amp.iter().zip(phase.iter_mut()).enumerate() {
            let freq = f0 * (h + 1) as f64;
            if freq < 7600.0 {
                acc += a * ph.sin();
                *ph += std::f64::consts::TAU * freq / sr;
            }
        }
        *w = acc * envelope[i] + 0.01 * (rng.uniform() - 0.5);
    }

    // normalize to a fixed RMS
    let rms = (wave.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let target_rms = 0.15;
    if rms > 1e-12 {
        let g = target_rms / rms;
        for v in &mut wave {
            *v *= g;
        }
    }
    wave
}

/// A mixed training example with its ground truth and cue stubs.
#[derive(Clone, Debug)]
pub struct MixtureSample {
    /// `mics x samples`, row-major (2 channels).
    pub mixture: Vec<f64>,
    pub mics: usize,
    pub samples: usize,
    /// Scaled clean target (channel-0 geometry).
    pub target: Vec<f64>,
    /// Scaled interferer as mixed into channel 0.
    pub interferer: Vec<f64>,
    pub snr_db: f64,
    /// Per-source channel-1 delays (target, interferer), in samples.
    pub delays: (usize, usize),
    pub voiceprint: Vec<f64>,
    /// `d_face x frames`, row-major.
    pub visual: Vec<f64>,
    pub visual_frames: usize,
    pub target_speaker: u32,
    pub interferer_speaker: u32,
}

fn delayed(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; x.len()];
    out[d..].copy_from_slice(&x[..x.len() - d]);
    out
}

/// Mix two distinct speakers at an exact SNR, with the channel-1 spatial
/// delay stub and the cue stubs attached.
pub fn make_mixture(
    cfg: &SynthConfig,
    spk_target: &SyntheticSpeaker,
    spk_interf: &SyntheticSpeaker,
    snr_db: f64,
    seconds: f64,
    seed: u64,
) -> Result<MixtureSample> {
    if spk_target.id == spk_interf.id {
        return Err(Error::Data("target and interferer must be distinct speakers".into()));
    }
    let mut rng = Rng::new(seed);
    let t_wave = synth_utterance(spk_target, seconds, rng.next_u64());
    let i_wave = synth_utterance(spk_interf, seconds, rng.next_u64());
    let n = t_wave.len();

    // exact SNR by construction: 10 log10(|t|^2 / |g i|^2) = snr_db
    let te: f64 = t_wave.iter().map(|v| v * v).sum();
    let ie: f64 = i_wave.iter().map(|v| v * v).sum();
    let g = (te / ie).sqrt() * 10f64.powf(-snr_db / 20.0);

    // distinct per-source delays for the second channel
    let d_t = rng.below(cfg.max_delay);
    let d_i = {
        let mut d = rng.below(cfg.max_delay);
        while d == d_t {
            d = rng.below(cfg.max_delay);
        }
        d
    };

    let ch0: Vec<f64> = t_wave.iter().zip(&i_wave).map(|(t, i)| t + g * i).collect();
    let t_d = delayed(&t_wave, d_t);
    let i_d = delayed(&i_wave, d_i);
    let ch1: Vec<f64> = t_d.iter().zip(&i_d).map(|(t, i)| t + g * i).collect();

    // common scale keeps SNR and SI-SDR geometry, prevents int16 clipping
    let peak = ch0
        .iter()
        .chain(&ch1)
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-9);
    let c = (0.9 / peak).min(1.0);

    let mut mixture = Vec::with_capacity(2 * n);
    mixture.extend(ch0.iter().map(|v| c * v));
    mixture.extend(ch1.iter().map(|v| c * v));
    let target: Vec<f64> = t_wave.iter().map(|v| c * v).collect();
    let interferer: Vec<f64> = i_wave.iter().map(|v| c * g * v).collect();

    let voiceprint = stub_voiceprint(spk_target.id, cfg.u);
    let (visual, visual_frames) = stub_visual(spk_target.id, &target, cfg, seconds);

    Ok(MixtureSample {
        mixture,
        mics: 2,
        samples: n,
        target,
        interferer,
        snr_db,
        delays: (d_t, d_i),
        voiceprint,
        visual,
        visual_frames,
        target_speaker: spk_target.id,
        interferer_speaker: spk_interf.id,
    })
}

/// Deterministic unit-norm voiceprint per speaker id.
pub fn stub_voiceprint(speaker_id: u32, dim: usize) -> Vec<f64> {
    let mut rng = Rng::new(0x5650_0000u64 ^ speaker_id as u64);
    let mut v = rng.fill_normal(dim);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Face-embedding stub: a deterministic per-speaker direction (with a
/// shared component common to all speakers) scaled by each video frame's
/// target energy. Frame norms track the target envelope.
pub fn stub_visual(
    speaker_id: u32,
    target: &[f64],
    cfg: &SynthConfig,
    seconds: f64,
) -> (Vec<f64>, usize) {
    let frames = ((seconds * cfg.fps as f64).round() as usize).max(1);
    let d = cfg.d_face;

    // shared direction + speaker-specific direction
    let mut shared_rng = Rng::new(0xFACE_0000);
    let shared = shared_rng.fill_normal(d);
    let mut spk_rng = Rng::new(0xFACE_0001 ^ ((speaker_id as u64) << 8));
    let specific = spk_rng.fill_normal(d);
    let mut dir: Vec<f64> = shared
        .iter()
        .zip(&specific)
        .map(|(s, p)| 0.7 * s + 0.7 * p)
        .collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut dir {
        *x /= norm;
    }

    // per-frame RMS energy of the target
    let window = target.len().div_ceil(frames).max(1);
    let mut energy = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = (f * window).min(target.len());
        let end = ((f + 1) * window).min(target.len());
        let e = if end > start {
            (target[start..end].iter().map(|v| v * v).sum::<f64>() / (end - start) as f64).sqrt()
        } else {
            0.0
        };
        energy.push(e);
    }
    let peak = energy.iter().cloned().fold(0.0f64, f64::max);
    if peak > 1e-12 {
        for e in &mut energy {
            *e /= peak;
        }
    }

    let mut out = vec![0.0f64; d * frames];
    for (f, &e) in energy.iter().enumerate() {
        for (di, &dv) in dir.iter().enumerate() {
            out[di * frames + f] = dv * e;
        }
    }
    (out, frames)
}

/// A three-way split with disjoint speaker sets.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub cfg: SynthConfig,
    pub train_speakers: u32,
    pub val_speakers: u32,
    pub test_speakers: u32,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub clip_seconds: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn speaker_ranges(&self) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
        let t = self.train_speakers;
        let v = self.val_speakers;
        let s = self.test_speakers;
        (
            (0..t).collect(),
            (t..t + v).collect(),
            (t + v..t + v + s).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.train_speakers + self.val_speakers + self.test_speakers;
        if total > MAX_SPEAKERS {
            return Err(Error::Data(format!(
                "{total} speakers requested, only {MAX_SPEAKERS} fundamental bands available"
            )));
        }
        if self.train_speakers < 2 || self.val_speakers < 2 || self.test_speakers < 2 {
            return Err(Error::Data("each split needs at least 2 speakers".into()));
        }
        Ok(())
    }
}

/// Generate one split's mixtures (pure function of the seed).
pub fn generate_split(
    cfg: &SynthConfig,
    speakers: &[u32],
    count: usize,
    clip_seconds: f64,
    seed: u64,
) -> Result<Vec<MixtureSample>> {
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = root.derive(i as u64 + 1);
        let a = speakers[rng.below(speakers.len())];
        let b = {
            let mut b = speakers[rng.below(speakers.len())];
            while b == a {
                b = speakers[rng.below(speakers.len())];
            }
            b
        };
        let snr = rng.range(cfg.snr_range.0, cfg.snr_range.1);
        out.push(make_mixture(
            cfg,
            &SyntheticSpeaker::new(a)?,
            &SyntheticSpeaker::new(b)?,
            snr,
            clip_seconds,
            rng.next_u64(),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterance_is_deterministic_and_in_rms_range() {
        let spk = SyntheticSpeaker::new(3).unwrap();
        let a = synth_utterance(&spk, 1.0, 7);
        let b = synth_utterance(&spk, 1.0, 7);
        assert_eq!(a, b, "same seed must be bit-identical");
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((0.05..=0.5).contains(&rms), "rms {rms}");
    }

    #[test]
    fn speakers_have_disjoint_bands() {
        let mut prev_hi = 0.0;
        for id in 0..MAX_SPEAKERS {
            let s = SyntheticSpeaker::new(id).unwrap();
            assert!(s.f0_lo > prev_hi, "bands overlap at speaker {id}");
            prev_hi = s.f0_hi;
        }
        assert!(SyntheticSpeaker::new(MAX_SPEAKERS).is_err());
    }

    #[test]
    fn spectra_peak_in_disjoint_fundamental_bands() {
        // Goertzel-style energy probe around each speaker's band
        let band_energy = |wave: &[f64], lo: f64, hi: f64| -> f64 {
            let sr = 16000.0;
            let n = wave.len() as f64;
            let mut total = 0.0;
            let mut f = lo;
            while f <= hi {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &v) in wave.iter().enumerate() {
                    let ph = std::f64::consts::TAU * f * i as f64 / sr;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                total += (re * re + im * im) / n;
                f += 2.0;
            }
            total
        };
        let a = SyntheticSpeaker::new(2).unwrap();
        let b = SyntheticSpeaker::new(9).unwrap();
        let wa = synth_utterance(&a, 0.5, 1);
        let wb = synth_utterance(&b, 0.5, 1);
        // each utterance has more energy in its own fundamental band
        let own_a = band_energy(&wa, a.f0_lo - 2.0, a.f0_hi + 2.0);
        let cross_a = band_energy(&wa, b.f0_lo - 2.0, b.f0_hi + 2.0);
        assert!(own_a > 4.0 * cross_a, "speaker a: own {own_a} vs cross {cross_a}");
        let own_b = band_energy(&wb, b.f0_lo - 2.0, b.f0_hi + 2.0);
        let cross_b = band_energy(&wb, a.f0_lo - 2.0, a.f0_hi + 2.0);
        assert!(own_b > 4.0 * cross_b, "speaker b: own {own_b} vs cross {cross_b}");
    }

    #[test]
    fn mixture_snr_is_exact() {
        let cfg = SynthConfig::default();
        let a = SyntheticSpeaker::new(0).unwrap();
        let b = SyntheticSpeaker::new(5).unwrap();
        for snr in [-5.0, 0.0, 3.7] {
            let m = make_mixture(&cfg, &a, &b, snr, 0.5, 11).unwrap();
            let te: f64 = m.target.iter().map(|v| v * v).sum();
            let ie: f64 = m.interferer.iter().map(|v| v * v).sum();
            let measured = 10.0 * (te / ie).log10();
            assert!((measured - snr).abs() < 1e-9, "snr {measured} vs {snr}");
            // channel 0 is exactly target + interferer
            for i in 0..m.samples {
                let sum = m.target[i] + m.interferer[i];
                assert!((m.mixture[i] - sum).abs() < 1e-12);
            }
        }
        // equal energies at snr 0
        let m = make_mixture(&cfg, &a, &b, 0.0, 0.5, 3).unwrap();
        let te: f64 = m.target.iter().map(|v| v * v).sum();
        let ie: f64 = m.interferer.iter().map(|v| v * v).sum();
        assert!((te - ie).abs() / te < 1e-9);
    }

    #[test]
    fn channel_one_cross_correlation_peaks_at_the_configured_delay() {
        let cfg = SynthConfig::default();
        let a = SyntheticSpeaker::new(1).unwrap();
        let b = SyntheticSpeaker::new(7).unwrap();
        let m = make_mixture(&cfg, &a, &b, 5.0, 0.5, 23).unwrap();
        let ch1 = &m.mixture[m.samples..];
        // correlate channel 1 with the clean (scaled) target
        let mut best = (0usize, f64::MIN);
        for lag in 0..cfg.max_delay + 4 {
            let c: f64 = (0..m.samples - lag)
                .map(|i| ch1[i + lag] * m.target[i])
                .sum();
            if c > best.1 {
                best = (lag, c);
            }
        }
        assert_eq!(best.0, m.delays.0, "correlation peak at wrong lag");
    }

    #[test]
    fn voiceprints_are_unit_norm_stable_and_spread() {
        let v = stub_voiceprint(4, 512);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(v, stub_voiceprint(4, 512));
        // sampled pairs have small cosine similarity
        let mut bad = 0;
        let mut total = 0;
        for i in 0..20u32 {
            for j in 0..20u32 {
                if i >= j {
                    continue;
                }
                let a = stub_voiceprint(i, 512);
                let b = stub_voiceprint(j, 512);
                let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                total += 1;
                if cos.abs() >= 0.5 {
                    bad += 1;
                }
            }
        }
        assert!(
            (bad as f64) < 0.01 * total as f64 + 1.0,
            "{bad}/{total} speaker pairs too similar"
        );
    }

    #[test]
    fn visual_stub_tracks_target_energy() {
        let cfg = SynthConfig::default();
        let spk = SyntheticSpeaker::new(2).unwrap();
        let target = synth_utterance(&spk, 1.0, 5);
        let (vis, frames) = stub_visual(spk.id, &target, &cfg, 1.0);
        assert_eq!(frames, 25); // fps * seconds
        // frame norms against frame energies: correlation > 0.9
        let window = target.len().div_ceil(frames);
        let mut norms = Vec::new();
        let mut energies = Vec::new();
        for f in 0..frames {
            let n: f64 = (0..cfg.d_face)
                .map(|d| vis[d * frames + f] * vis[d * frames + f])
                .sum::<f64>()
                .sqrt();
            norms.push(n);
            let start = f * window;
            let end = ((f + 1) * window).min(target.len());
            let e = (target[start..end].iter().map(|v| v * v).sum::<f64>()
                / (end - start) as f64)
                .sqrt();
            energies.push(e);
        }
        let corr = correlation(&norms, &energies);
        assert!(corr > 0.9, "norm/energy correlation {corr}");

        // a silent target gives constant (zero) frames
        let silent = vec![0.0; 16000];
        let (vis0, _) = stub_visual(spk.id, &silent, &cfg, 1.0);
        assert!(vis0.iter().all(|&v| v == 0.0));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va.sqrt() * vb.sqrt()).max(1e-12)
    }

    #[test]
    fn splits_are_deterministic_and_speaker_disjoint() {
        let spec = DatasetSpec {
            cfg: SynthConfig::default(),
            train_speakers: 6,
            val_speakers: 2,
            test_speakers: 2,
            train_count: 3,
            val_count: 2,
            test_count: 2,
            clip_seconds: 0.25,
            seed: 99,
        };
        spec.validate().unwrap();
        let (tr, va, te) = spec.speaker_ranges();
        assert!(tr.iter().all(|s| !va.contains(s) && !te.contains(s)));
        assert!(va.iter().all(|s| !te.contains(s)));
        let a = generate_split(&spec.cfg, &tr, 3, 0.25, 99).unwrap();
        let b = generate_split(&spec.cfg, &tr, 3, 0.25, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mixture, y.mixture, "dataset generation must be bit-identical");
        }
        for s in &a {
            assert!(tr.contains(&s.target_speaker) && tr.contains(&s.interferer_speaker));
            assert_ne!(s.target_speaker, s.interferer_speaker);
        }
    }

    #[test]
    fn identical_speakers_rejected() {
        let cfg = SynthConfig::default();
        let a = SyntheticSpeaker::new(0).unwrap();
        assert!(make_mixture(&cfg, &a, &a.clone(), 0.0, 0.1, 1).is_err());
    }
}

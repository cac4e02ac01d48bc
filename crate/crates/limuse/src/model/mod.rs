//! The assembled target-speaker extraction network.
//!
//! Pipeline: a strided conv encoder turns the multi-channel mixture into a
//! frame-rate representation; the context codec compresses it to the
//! window rate; the audio block models it; voiceprint and visual cues are
//! compressed to the same rate and concatenated; the fusion block
//! processes the joint sequence; the context decoder restores frame rate;
//! a 1x1 conv with ReLU emits a nonnegative mask over the encoded
//! mixture; a transposed conv resynthesizes the waveform.

mod config;

pub use config::ModelConfig;

use crate::accounting::LayerRow;
use crate::error::{Error, Result};
use crate::gctcn::{ContextCodec, Encoded, GcTcnBlock};
use crate::nn::{Conv1d, ConvTranspose1d, LayerKind, Linear, ParamStore, Pass};
use crate::quant::QuantLevelSet;
use crate::rng::Rng;
use crate::tensor::{PadMode, Tensor};

pub struct ModelOutput {
    /// Estimated target waveform `[B, samples]`, trimmed to the input length.
    pub wave: Tensor,
    /// Mask over the encoded mixture `[B, N, T_frames]`.
    pub mask: Tensor,
}

pub struct LiMuseModel {
    pub cfg: ModelConfig,
    pub audio_encoder: Conv1d,
    pub voiceprint_fc: Linear,
    pub visual_fc: Conv1d,
    pub codec: Option<ContextCodec>,
    pub audio_blocks: Vec<GcTcnBlock>,
    pub fusion_blocks: Vec<GcTcnBlock>,
    pub mask_conv: Conv1d,
    pub decoder: ConvTranspose1d,
}

impl LiMuseModel {
    pub fn build(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let stride = cfg.encoder_stride();

        // zero-bias encoder: silence maps to an all-zero representation
        let audio_encoder = Conv1d::init_with_bias(
            store,
            &mut rng,
            "audio_encoder",
            cfg.mics,
            cfg.n,
            cfg.l,
            stride,
            1,
            1,
            PadMode::Valid,
            false,
        );
        let voiceprint_fc = Linear::init(store, &mut rng, "voiceprint_fc", cfg.u, cfg.n);
        let visual_fc = Conv1d::pointwise(store, &mut rng, "visual_fc", cfg.d_face, cfg.n);

        let codec = if cfg.use_context_codec {
            Some(ContextCodec::init(
                store,
                &mut rng,
                "codec",
                cfg.s,
                cfg.n,
                cfg.fusion_width(),
                cfg.k,
                cfg.p,
                cfg.codec_depth,
                cfg.causal,
            )?)
        } else {
            None
        };

        let mut audio_blocks = Vec::with_capacity(cfg.r_a * cfg.x);
        for r in 0..cfg.r_a {
            for j in 0..cfg.x {
                audio_blocks.push(GcTcnBlock::init(
                    store,
                    &mut rng,
                    &format!("audio.r{r}.b{j}"),
                    cfg.n,
                    cfg.k,
                    cfg.p,
                    1 << j,
                    cfg.causal,
                )?);
            }
        }
        let mut fusion_blocks = Vec::with_capacity(cfg.r_f * cfg.x);
        for r in 0..cfg.r_f {
            for j in 0..cfg.x {
                fusion_blocks.push(GcTcnBlock::init(
                    store,
                    &mut rng,
                    &format!("fusion.r{r}.b{j}"),
                    cfg.fusion_width(),
                    cfg.k,
                    cfg.p,
                    1 << j,
                    cfg.causal,
                )?);
            }
        }
        let mask_conv =
            Conv1d::pointwise(store, &mut rng, "mask_conv", cfg.fusion_width(), cfg.n);
        let decoder =
            ConvTranspose1d::init(store, &mut rng, "decoder", cfg.n, 1, cfg.l, stride);

        Ok(LiMuseModel {
            cfg: cfg.clone(),
            audio_encoder,
            voiceprint_fc,
            visual_fc,
            codec,
            audio_blocks,
            fusion_blocks,
            mask_conv,
            decoder,
        })
    }

    /// Encode the mixture into the frame-rate representation `[B, N, T]`.
    pub fn encode_audio(&self, pass: &Pass, store: &ParamStore, mix: &Tensor) -> Result<Tensor> {
        let shape = mix.shape();
        if shape.len() != 3 || shape[1] != self.cfg.mics {
            return Err(Error::invalid(
                "encode_audio",
                format!("expected [B, {}, samples], got {shape:?}", self.cfg.mics),
            ));
        }
        let samples = shape[2];
        let padded = self.cfg.padded_samples(samples)?;
        let x = if padded == samples { mix.clone() } else { mix.pad_last(0, padded - samples) };
        Ok(self.audio_encoder.forward(pass, store, &x)?.named("encoded_mixture"))
    }

    /// Tile the mapped speaker embedding over time: `[B, U] -> [B, N, T]`.
    /// All columns are identical (the embedding is constant in time).
    pub fn encode_voiceprint(
        &self,
        pass: &Pass,
        store: &ParamStore,
        s0: &Tensor,
        t_frames: usize,
    ) -> Result<Tensor> {
        let shape = s0.shape();
        if shape.len() != 2 || shape[1] != self.cfg.u {
            return Err(Error::invalid(
                "encode_voiceprint",
                format!("expected [B, {}], got {shape:?}", self.cfg.u),
            ));
        }
        let b = shape[0];
        let mapped = self.voiceprint_fc.forward(pass, store, s0)?;
        mapped
            .reshape(&[b, self.cfg.n, 1])?
            .broadcast_to(&[b, self.cfg.n, t_frames])
            .map(|t| t.named("voiceprint_stream"))
    }

    /// Map face embeddings per frame and nearest-neighbor upsample to the
    /// audio frame rate: `[B, D, E] -> [B, N, T]`.
    pub fn encode_visual(
        &self,
        pass: &Pass,
        store: &ParamStore,
        v: &Tensor,
        t_frames: usize,
    ) -> Result<Tensor> {
        let shape = v.shape();
        if shape.len() != 3 || shape[1] != self.cfg.d_face {
            return Err(Error::invalid(
                "encode_visual",
                format!("expected [B, {}, E], got {shape:?}", self.cfg.d_face),
            ));
        }
        if shape[2] == 0 {
            return Err(Error::invalid("encode_visual", "no video frames"));
        }
        let mapped = self.visual_fc.forward(pass, store, v)?;
        mapped.upsample_nearest_last(t_frames).map(|t| t.named("visual_stream"))
    }

    /// Full forward pass.
    ///
    /// `mix: [B, mics, samples]`, `s0: [B, U]`, `v: [B, D_face, E]`.
    pub fn forward(
        &self,
        pass: &Pass,
        store: &ParamStore,
        mix: &Tensor,
        s0: &Tensor,
        v: &Tensor,
    ) -> Result<ModelOutput> {
        let samples = mix.shape()[2];
        let enc = self.encode_audio(pass, store, mix)?;
        let t_frames = enc.shape()[2];
        let vp = self.encode_voiceprint(pass, store, s0, t_frames)?;
        let vis = self.encode_visual(pass, store, v, t_frames)?;

        let pre_mask = match &self.codec {
            Some(codec) => {
                // compress all three streams to the window rate
                let enc_a = codec.encode(pass, store, &enc)?;
                let vp_seg = codec.segment(&vp)?;
                let vis_seg = codec.segment(&vis)?;

                let mut audio = enc_a.summary.clone().named("audio_summary");
                for blk in &self.audio_blocks {
                    audio = blk.forward(pass, store, &audio)?;
                }
                // fusion order: [audio; voiceprint; visual]
                let mut fused =
                    Tensor::concat(&[&audio, &vp_seg.summary, &vis_seg.summary], 1)?
                        .named("fused_summary");
                for blk in &self.fusion_blocks {
                    fused = blk.forward(pass, store, &fused)?;
                }
                // decode at the fused width using the saved windows of all
                // three streams, concatenated in the same order
                let blocks =
                    Tensor::concat(&[&enc_a.blocks, &vp_seg.blocks, &vis_seg.blocks], 1)?;
                let fused_enc = Encoded {
                    summary: fused.clone(),
                    blocks,
                    t_blk: enc_a.t_blk,
                    valid_len: enc_a.valid_len,
                    padded_len: enc_a.padded_len,
                    batch: enc_a.batch,
                };
                codec.decode(pass, store, &fused, &fused_enc)?.named("decoded_features")
            }
            None => {
                let mut audio = enc.clone();
                for blk in &self.audio_blocks {
                    audio = blk.forward(pass, store, &audio)?;
                }
                let mut fused = Tensor::concat(&[&audio, &vp, &vis], 1)?.named("fused_frames");
                for blk in &self.fusion_blocks {
                    fused = blk.forward(pass, store, &fused)?;
                }
                fused
            }
        };

        let mask = self
            .mask_conv
            .forward(pass, store, &pre_mask)?
            .relu()
            .named("mask");
        let masked = mask.mul(&enc)?;
        let wave = self.decoder.forward(pass, store, &masked)?;
        let wave = wave.slice_axis(2, 0, samples)?;
        let b = wave.shape()[0];
        Ok(ModelOutput { wave: wave.reshape(&[b, samples])?, mask })
    }

    /// Algorithmic lookahead of the causal configuration, in samples:
    /// output at time `t` depends on inputs no later than `t + lookahead`.
    /// The frame machinery contributes `L-1`; with the context codec the
    /// window machinery adds `(S-1) * stride` on top.
    pub fn lookahead_samples(&self) -> Option<usize> {
        if !self.cfg.causal {
            return None;
        }
        let frame_part = self.cfg.l - 1;
        let codec_part = if self.cfg.use_context_codec {
            (self.cfg.s - 1) * self.cfg.encoder_stride()
        } else {
            0
        };
        Some(frame_part + codec_part)
    }

    /// Attach weight and activation quantizers to every quantizable layer
    /// (all convs and FCs except the audio decoder; PReLU and norms have
    /// no quantizers by construction).
    pub fn attach_quantizers(&mut self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let levels = QuantLevelSet::for_bits(self.cfg.w_q)?;
        let bits = self.cfg.a_q;
        let mut counter = 0u64;
        let mut attach_conv = |store: &mut ParamStore, c: &mut Conv1d| -> Result<()> {
            counter += 1;
            c.attach_quantizer(store, &levels, bits, seed ^ counter)
        };
        attach_conv(store, &mut self.audio_encoder)?;
        attach_conv(store, &mut self.visual_fc)?;
        if let Some(codec) = &mut self.codec {
            for c in codec.convs_mut() {
                attach_conv(store, c)?;
            }
        }
        for blk in self.audio_blocks.iter_mut().chain(self.fusion_blocks.iter_mut()) {
            for c in blk.convs_mut() {
                attach_conv(store, c)?;
            }
        }
        attach_conv(store, &mut self.mask_conv)?;
        self.voiceprint_fc.attach_quantizer(store, &levels, bits, seed ^ (counter + 1))?;
        Ok(())
    }

    /// Mutable view of the quantizable convolutions, in the same order as
    /// [`Self::quantized_convs`].
    pub fn quantized_convs_mut(&mut self) -> Vec<&mut Conv1d> {
        let mut v: Vec<&mut Conv1d> = vec![&mut self.audio_encoder, &mut self.visual_fc];
        if let Some(codec) = &mut self.codec {
            for blk in codec.enc_blocks.iter_mut().chain(codec.dec_blocks.iter_mut()) {
                v.extend(blk.convs_mut());
            }
        }
        for blk in self.audio_blocks.iter_mut().chain(self.fusion_blocks.iter_mut()) {
            v.extend(blk.convs_mut());
        }
        v.push(&mut self.mask_conv);
        v
    }

    /// Quantized layers in a stable order (for checkpoint export).
    pub fn quantized_convs(&self) -> Vec<&Conv1d> {
        let mut v: Vec<&Conv1d> = vec![&self.audio_encoder, &self.visual_fc];
        if let Some(codec) = &self.codec {
            for blk in codec.enc_blocks.iter().chain(codec.dec_blocks.iter()) {
                v.extend(block_convs(blk));
            }
        }
        for blk in self.audio_blocks.iter().chain(self.fusion_blocks.iter()) {
            v.extend(block_convs(blk));
        }
        v.push(&self.mask_conv);
        v
    }

    // ── Accounting ───────────────────────────────────────────────────

    /// Per-tensor accounting rows for a probe input of `seconds` of audio.
    /// Parameter counts are read from the store (so they match the real
    /// parameter collection exactly); MACs use the conv/FC closed forms at
    /// the sequence lengths this configuration actually runs.
    pub fn layer_rows(&self, store: &ParamStore, seconds: f64) -> Result<Vec<LayerRow>> {
        let samples = (seconds * self.cfg.sample_rate as f64).round() as usize;
        let t_frames = self.cfg.frames_for_samples(samples)?;
        let e_frames = ((seconds * self.cfg.fps as f64).round() as usize).max(1);
        let (t_sep, t_blk) = match &self.codec {
            Some(codec) => {
                let (_, t_blk) = codec.plan(t_frames);
                (t_blk, t_blk)
            }
            None => (t_frames, 0),
        };

        let mut rows = Vec::new();
        conv_rows(&mut rows, store, &self.audio_encoder, t_frames, 1, true);
        linear_rows(&mut rows, store, &self.voiceprint_fc, 1, true);
        conv_rows(&mut rows, store, &self.visual_fc, e_frames, 1, true);
        if let Some(codec) = &self.codec {
            for blk in &codec.enc_blocks {
                block_rows(&mut rows, store, blk, codec.size, t_blk, true);
            }
            for blk in &codec.dec_blocks {
                block_rows(&mut rows, store, blk, codec.size, t_blk, true);
            }
        }
        for blk in &self.audio_blocks {
            block_rows(&mut rows, store, blk, t_sep, 1, true);
        }
        for blk in &self.fusion_blocks {
            block_rows(&mut rows, store, blk, t_sep, 1, true);
        }
        conv_rows(&mut rows, store, &self.mask_conv, t_frames, 1, true);
        // decoder is excluded from quantization
        let dec = &self.decoder;
        rows.push(LayerRow {
            name: store.name(dec.weight).to_string(),
            kind: LayerKind::ConvTranspose,
            params: store.data(dec.weight).len(),
            macs: (dec.cin * dec.cout * dec.k * t_frames) as f64,
            quantized: false,
        });
        if let Some(b) = dec.bias {
            rows.push(LayerRow {
                name: store.name(b).to_string(),
                kind: LayerKind::ConvTranspose,
                params: store.data(b).len(),
                macs: 0.0,
                quantized: false,
            });
        }
        Ok(rows)
    }
}

fn block_convs(blk: &GcTcnBlock) -> Vec<&Conv1d> {
    vec![
        &blk.tac.fc1,
        &blk.tac.fc2,
        &blk.tac.fc3,
        &blk.tcn.pw_in,
        &blk.tcn.dw,
        &blk.tcn.pw_out,
    ]
}

fn conv_rows(
    rows: &mut Vec<LayerRow>,
    store: &ParamStore,
    conv: &Conv1d,
    t_out: usize,
    mult: usize,
    quantized: bool,
) {
    let weight_params = store.data(conv.weight).len();
    rows.push(LayerRow {
        name: store.name(conv.weight).to_string(),
        kind: LayerKind::Conv,
        params: weight_params,
        macs: (weight_params * t_out * mult) as f64,
        quantized,
    });
    if let Some(b) = conv.bias {
        rows.push(LayerRow {
            name: store.name(b).to_string(),
            kind: LayerKind::Conv,
            params: store.data(b).len(),
            macs: 0.0,
            quantized: false,
        });
    }
}

fn linear_rows(
    rows: &mut Vec<LayerRow>,
    store: &ParamStore,
    lin: &Linear,
    steps: usize,
    quantized: bool,
) {
    rows.push(LayerRow {
        name: store.name(lin.weight).to_string(),
        kind: LayerKind::Linear,
        params: lin.fan_in * lin.fan_out,
        macs: (lin.fan_in * lin.fan_out * steps) as f64,
        quantized,
    });
    if let Some(b) = lin.bias {
        rows.push(LayerRow {
            name: store.name(b).to_string(),
            kind: LayerKind::Linear,
            params: store.data(b).len(),
            macs: 0.0,
            quantized: false,
        });
    }
}

/// Rows for one GC-TCN block: the grouped paths run `groups` times per
/// position (shared weights, so parameters do not scale with the group
/// count but compute does), the average path once; `mult` is the number of
/// windows the block processes per input (context-codec stacks run once
/// per window).
fn block_rows(
    rows: &mut Vec<LayerRow>,
    store: &ParamStore,
    blk: &GcTcnBlock,
    t: usize,
    mult: usize,
    quantized: bool,
) {
    let mult = mult.max(1);
    let k = blk.groups;
    conv_rows(rows, store, &blk.tac.fc1, t, mult * k, quantized);
    prelu_row(rows, store, blk.tac.p1.slopes);
    conv_rows(rows, store, &blk.tac.fc2, t, mult, quantized);
    prelu_row(rows, store, blk.tac.p2.slopes);
    conv_rows(rows, store, &blk.tac.fc3, t, mult * k, quantized);
    prelu_row(rows, store, blk.tac.p3.slopes);
    conv_rows(rows, store, &blk.tcn.pw_in, t, mult * k, quantized);
    prelu_row(rows, store, blk.tcn.prelu1.slopes);
    norm_rows(rows, store, blk.tcn.norm1.gain, blk.tcn.norm1.bias);
    conv_rows(rows, store, &blk.tcn.dw, t, mult * k, quantized);
    prelu_row(rows, store, blk.tcn.prelu2.slopes);
    norm_rows(rows, store, blk.tcn.norm2.gain, blk.tcn.norm2.bias);
    conv_rows(rows, store, &blk.tcn.pw_out, t, mult * k, quantized);
}

fn prelu_row(rows: &mut Vec<LayerRow>, store: &ParamStore, id: crate::nn::ParamId) {
    rows.push(LayerRow {
        name: store.name(id).to_string(),
        kind: LayerKind::PRelu,
        params: store.data(id).len(),
        macs: 0.0,
        quantized: false,
    });
}

fn norm_rows(
    rows: &mut Vec<LayerRow>,
    store: &ParamStore,
    gain: crate::nn::ParamId,
    bias: crate::nn::ParamId,
) {
    for id in [gain, bias] {
        rows.push(LayerRow {
            name: store.name(id).to_string(),
            kind: LayerKind::Norm,
            params: store.data(id).len(),
            macs: 0.0,
            quantized: false,
        });
    }
}

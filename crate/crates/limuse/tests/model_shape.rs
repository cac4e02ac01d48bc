//! Full-model structural tests: shape contracts, stream synchronization,
//! fusion order, causality, encoder/decoder identities, gradient flow.

use limuse::model::{LiMuseModel, ModelConfig};
use limuse::nn::{ParamStore, Pass};
use limuse::rng::Rng;
use limuse::tensor::{Tape, Tensor};

/// A few-thousand-parameter configuration for fast structural tests.
fn micro_config() -> ModelConfig {
    ModelConfig {
        n: 16,
        l: 8,
        p: 3,
        r_a: 1,
        r_f: 1,
        s: 8,
        k: 2,
        x: 2,
        u: 24,
        d_face: 12,
        ..Default::default()
    }
}

fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore, LiMuseModel) {
    let mut store = ParamStore::new();
    let model = LiMuseModel::build(&mut store, cfg, seed).unwrap();
    (store, model)
}

fn random_inputs(cfg: &ModelConfig, samples: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let e = (cfg.fps * samples / cfg.sample_rate).max(2);
    let mix = Tensor::from_vec(rng.fill_uniform(cfg.mics * samples, -0.5, 0.5), &[1, cfg.mics, samples])
        .unwrap();
    let vp = Tensor::from_vec(rng.fill_normal(cfg.u), &[1, cfg.u]).unwrap();
    let vis = Tensor::from_vec(rng.fill_normal(cfg.d_face * e), &[1, cfg.d_face, e]).unwrap();
    (mix, vp, vis)
}

#[test]
fn output_length_matches_input_for_awkward_lengths() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 1);
    let pass = Pass::eval();
    for samples in [16000usize, 48000, 48017] {
        let (mix, vp, vis) = random_inputs(&cfg, samples, 7);
        let out = model.forward(&pass, &store, &mix, &vp, &vis).unwrap();
        assert_eq!(out.wave.shape(), &[1, samples], "trim contract broken at {samples}");
        assert!(out.wave.data().iter().all(|v| v.is_finite()));
        let t_frames = cfg.frames_for_samples(samples).unwrap();
        assert_eq!(out.mask.shape(), &[1, cfg.n, t_frames]);
        assert!(out.mask.data().iter().all(|&m| m >= 0.0), "mask must be nonnegative");
    }
}

#[test]
fn no_codec_configuration_also_runs() {
    let cfg = ModelConfig { use_context_codec: false, ..micro_config() };
    let (store, model) = build(&cfg, 2);
    let (mix, vp, vis) = random_inputs(&cfg, 4000, 8);
    let out = model.forward(&Pass::eval(), &store, &mix, &vp, &vis).unwrap();
    assert_eq!(out.wave.shape(), &[1, 4000]);
}

#[test]
fn zero_signal_encodes_to_zero_and_zero_mask_silences_output() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 3);
    let pass = Pass::eval();
    // zero-bias encoder: silence -> all-zero representation
    let silence = Tensor::zeros(&[1, cfg.mics, 1000]);
    let enc = model.encode_audio(&pass, &store, &silence).unwrap();
    assert!(enc.data().iter().all(|&v| v == 0.0));
    // linear decoder: zero masked representation -> zero waveform
    let zero_repr = Tensor::zeros(&[1, cfg.n, 25]);
    let wave = model.decoder.forward(&pass, &store, &zero_repr).unwrap();
    assert!(wave.data().iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_is_linear() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 4);
    let pass = Pass::eval();
    let mut rng = Rng::new(11);
    let a = Tensor::from_vec(rng.fill_normal(cfg.n * 10), &[1, cfg.n, 10]).unwrap();
    let b = Tensor::from_vec(rng.fill_normal(cfg.n * 10), &[1, cfg.n, 10]).unwrap();
    let da = model.decoder.forward(&pass, &store, &a).unwrap();
    let db = model.decoder.forward(&pass, &store, &b).unwrap();
    let dsum = model.decoder.forward(&pass, &store, &a.add(&b).unwrap()).unwrap();
    for ((x, y), z) in da.data().iter().zip(db.data()).zip(dsum.data()) {
        assert!((x + y - z).abs() < 1e-10, "decoder not linear");
    }
}

#[test]
fn decoder_is_adjoint_of_encoder_with_tied_weights() {
    // <conv(x), y> = <x, convT(y)> when the decoder reuses the encoder
    // kernel (single-channel probe).
    let cfg = ModelConfig { mics: 1, ..micro_config() };
    let (store, model) = build(&cfg, 5);
    let pass = Pass::eval();
    let mut rng = Rng::new(13);
    let samples = 8 + 16 * 4;
    let x = Tensor::from_vec(rng.fill_normal(samples), &[1, 1, samples]).unwrap();
    let enc = model.encode_audio(&pass, &store, &x).unwrap();
    let t = enc.shape()[2];
    let y = Tensor::from_vec(rng.fill_normal(cfg.n * t), &[1, cfg.n, t]).unwrap();
    // convT with the encoder weight reinterpreted as [Cout=N, Cin=1, k]
    let w = Tensor::from_shared(store.shared(model.audio_encoder.weight), &[cfg.n, 1, cfg.l])
        .unwrap();
    let xt = y.conv_transpose1d(&w, None, cfg.encoder_stride()).unwrap();
    let lhs: f64 = enc.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10, "adjoint identity: {lhs} vs {rhs}");
}

#[test]
fn voiceprint_columns_identical_and_match_fc_then_tile_oracle() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 6);
    let pass = Pass::eval();
    let mut rng = Rng::new(17);
    let s0_data = rng.fill_normal(cfg.u);
    let s0 = Tensor::from_vec(s0_data.clone(), &[1, cfg.u]).unwrap();
    let t = 9;
    let vp = model.encode_voiceprint(&pass, &store, &s0, t).unwrap();
    assert_eq!(vp.shape(), &[1, cfg.n, t]);
    // all columns equal column 0
    for c in 0..cfg.n {
        for ti in 1..t {
            assert_eq!(vp.data()[c * t + ti], vp.data()[c * t]);
        }
    }
    // oracle: apply the FC manually, then tile
    let w = store.data(model.voiceprint_fc.weight); // [U, N]
    let b = store.data(model.voiceprint_fc.bias.unwrap());
    for c in 0..cfg.n {
        let mut acc = b[c];
        for (i, &sv) in s0_data.iter().enumerate() {
            acc += w[i * cfg.n + c] * sv;
        }
        assert!((vp.data()[c * t] - acc).abs() < 1e-12, "FC-then-tile oracle mismatch");
    }
    // zero embedding -> bias-only columns
    let zero = Tensor::zeros(&[1, cfg.u]);
    let vp0 = model.encode_voiceprint(&pass, &store, &zero, 3).unwrap();
    for c in 0..cfg.n {
        assert!((vp0.data()[c * 3] - b[c]).abs() < 1e-15);
    }
}

#[test]
fn visual_upsample_follows_nearest_index_map() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 7);
    let pass = Pass::eval();
    let mut rng = Rng::new(19);
    let e = 5;
    let v = Tensor::from_vec(rng.fill_normal(cfg.d_face * e), &[1, cfg.d_face, e]).unwrap();
    let t = 12;
    let vis = model.encode_visual(&pass, &store, &v, t).unwrap();
    // per-index oracle against the un-upsampled FC output
    let mapped = model.visual_fc.forward(&pass, &store, &v).unwrap();
    for c in 0..cfg.n {
        for ti in 0..t {
            let src = ti * e / t;
            assert_eq!(vis.data()[c * t + ti], mapped.data()[c * e + src]);
        }
    }
}

#[test]
fn streams_are_time_synchronized_at_fusion() {
    // all three summaries must share (B, ., T_blk); verified indirectly:
    // forward succeeds for lengths whose padding differs across streams
    let cfg = micro_config();
    let (store, model) = build(&cfg, 8);
    for samples in [999usize, 1000, 1001, 1017] {
        let (mix, vp, vis) = random_inputs(&cfg, samples.max(cfg.l), 23);
        let out = model.forward(&Pass::eval(), &store, &mix, &vp, &vis);
        assert!(out.is_ok(), "stream desync at {samples}: {:?}", out.err());
    }
}

#[test]
fn fusion_concat_order_is_audio_voiceprint_visual() {
    // Sentinel probe: zero out the fusion blocks (residuals make them the
    // identity) and point the mask conv at one third of its input range.
    // The mask then responds only to the stream living in that range.
    let cfg = ModelConfig { use_context_codec: false, ..micro_config() };
    let (mut store, model) = build(&cfg, 9);
    // zero every separator-block parameter: the residual connections then
    // make the audio and fusion blocks pass their input through unchanged
    let block_ids: Vec<_> = store
        .iter()
        .filter(|(_, e)| e.name.starts_with("fusion.") || e.name.starts_with("audio."))
        .map(|(id, _)| id)
        .collect();
    for id in block_ids {
        let n = store.data(id).len();
        store.set_data(id, vec![0.0; n]);
    }
    // mask conv reads exactly one stream's channel range
    let n = cfg.n;
    let probe_stream = |store: &mut ParamStore, range_start: usize| {
        let mut w = vec![0.0; n * 3 * n];
        // out channel 0 sums the probed range
        for cin in range_start..range_start + n {
            w[cin] = 1.0;
        }
        store.set_data(model.mask_conv.weight, w);
        let bn = store.data(model.mask_conv.bias.unwrap()).len();
        store.set_data(model.mask_conv.bias.unwrap(), vec![0.0; bn]);
    };
    let samples = 400;
    let (mix, vp, vis) = random_inputs(&cfg, samples, 29);
    let pass = Pass::eval();
    let t_frames = cfg.frames_for_samples(samples).unwrap();

    // audio occupies [0, N): with silent mixture the audio stream is zero
    probe_stream(&mut store, 0);
    let silence = Tensor::zeros(&[1, cfg.mics, samples]);
    let out = model.forward(&pass, &store, &silence, &vp, &vis).unwrap();
    assert!(out.mask.data().iter().all(|&m| m == 0.0), "audio range saw non-audio data");

    // voiceprint occupies [N, 2N): mask rows must be constant over time
    probe_stream(&mut store, n);
    let out = model.forward(&pass, &store, &mix, &vp, &vis).unwrap();
    let mrow = &out.mask.data()[..t_frames];
    for ti in 1..t_frames {
        assert_eq!(mrow[ti], mrow[0], "voiceprint range is not constant in time");
    }
    // and it must match the voiceprint stream sum directly
    let vp_stream = model.encode_voiceprint(&pass, &store, &vp, t_frames).unwrap();
    let expect: f64 = (0..n).map(|c| vp_stream.data()[c * t_frames]).sum::<f64>().max(0.0);
    assert!((mrow[0] - expect).abs() < 1e-9, "voiceprint range mismatch");

    // visual occupies [2N, 3N): zeroing the visual input zeroes the mask
    probe_stream(&mut store, 2 * n);
    let zero_vis = Tensor::zeros(&[1, cfg.d_face, vis.shape()[2]]);
    let out = model.forward(&pass, &store, &mix, &vp, &zero_vis).unwrap();
    let vis_bias = store.data(model.visual_fc.bias.unwrap());
    let bias_sum: f64 = vis_bias.iter().sum::<f64>();
    for ti in 0..t_frames {
        assert!(
            (out.mask.data()[ti] - bias_sum.max(0.0)).abs() < 1e-9,
            "visual range saw non-visual data"
        );
    }
}

#[test]
fn causal_model_is_causal_up_to_documented_lookahead() {
    for use_codec in [false, true] {
        let cfg = ModelConfig { causal: true, use_context_codec: use_codec, ..micro_config() };
        let (store, model) = build(&cfg, 10);
        let lookahead = model.lookahead_samples().unwrap();
        let pass = Pass::eval();
        let samples = 600;
        let (mix, vp, vis) = random_inputs(&cfg, samples, 31);
        let t = 300usize;
        // perturb strictly after t + lookahead
        let mut pert = mix.data().to_vec();
        for ch in 0..cfg.mics {
            for s in (t + lookahead + 1)..samples {
                pert[ch * samples + s] += 3.0;
            }
        }
        let pert = Tensor::from_vec(pert, &[1, cfg.mics, samples]).unwrap();
        let y0 = model.forward(&pass, &store, &mix, &vp, &vis).unwrap();
        let y1 = model.forward(&pass, &store, &pert, &vp, &vis).unwrap();
        for s in 0..=t {
            assert_eq!(
                y0.wave.data()[s],
                y1.wave.data()[s],
                "causal leak at sample {s} (codec={use_codec}, lookahead={lookahead})"
            );
        }
        // sanity: the perturbation does change later outputs
        assert!(
            y0.wave.data().iter().zip(y1.wave.data()).any(|(a, b)| a != b),
            "perturbation had no effect at all"
        );
    }
}

#[test]
fn non_causal_model_uses_future_context() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 12);
    let pass = Pass::eval();
    let samples = 600;
    let (mix, vp, vis) = random_inputs(&cfg, samples, 37);
    let mut pert = mix.data().to_vec();
    for ch in 0..cfg.mics {
        pert[ch * samples + samples - 1] += 3.0;
    }
    let pert = Tensor::from_vec(pert, &[1, cfg.mics, samples]).unwrap();
    let y0 = model.forward(&pass, &store, &mix, &vp, &vis).unwrap();
    let y1 = model.forward(&pass, &store, &pert, &vp, &vis).unwrap();
    assert!(
        y0.wave.data()[..100].iter().zip(&y1.wave.data()[..100]).any(|(a, b)| a != b),
        "non-causal model unexpectedly ignored future context"
    );
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = micro_config();
    let (mut store, model) = build(&cfg, 13);
    let tape = Tape::new();
    let pass = Pass::train(&tape);
    let (mix, vp, vis) = random_inputs(&cfg, 500, 41);
    let out = model.forward(&pass, &store, &mix, &vp, &vis).unwrap();
    // scalar objective touching every output sample
    let loss = out.wave.mul(&out.wave).unwrap().sum_all();
    loss.backward().unwrap();
    pass.harvest_grads(&mut store);
    let mut dead = Vec::new();
    for (id, entry) in store.iter() {
        match store.grad(id) {
            None => dead.push(format!("{} (no grad)", entry.name)),
            Some(g) => {
                if g.iter().all(|&v| v == 0.0) {
                    dead.push(format!("{} (all-zero grad)", entry.name));
                }
            }
        }
    }
    assert!(dead.is_empty(), "parameters without gradient flow: {dead:?}");
}

#[test]
fn untrained_forward_is_finite_on_a_toy_mixture() {
    let cfg = micro_config();
    let (store, model) = build(&cfg, 14);
    let (mix, vp, vis) = random_inputs(&cfg, 1600, 43);
    let out = model.forward(&Pass::eval(), &store, &mix, &vp, &vis).unwrap();
    assert!(out.wave.data().iter().all(|v| v.is_finite()));
    // SI-SDR against an arbitrary reference must also be finite
    let mut rng = Rng::new(44);
    let reference = rng.fill_uniform(1600, -0.5, 0.5);
    let v = limuse::metrics::si_sdr(out.wave.data(), &reference).unwrap();
    assert!(v.is_finite());
}

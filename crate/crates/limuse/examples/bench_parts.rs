//! Per-stage timing of the tiny-config forward pass.

use std::time::Instant;

use limuse::model::{LiMuseModel, ModelConfig};
use limuse::nn::{ParamStore, Pass};
use limuse::rng::Rng;
use limuse::tensor::Tensor;

fn main() {
    let b = 2usize;
    let cfg = ModelConfig::tiny();
    let mut store = ParamStore::new();
    let model = LiMuseModel::build(&mut store, &cfg, 42).unwrap();
    let mut rng = Rng::new(5);
    let samples = 16000;
    let mix =
        Tensor::from_vec(rng.fill_uniform(b * 2 * samples, -0.5, 0.5), &[b, 2, samples]).unwrap();
    let vp = Tensor::from_vec(rng.fill_normal(b * cfg.u), &[b, cfg.u]).unwrap();
    let vis = Tensor::from_vec(rng.fill_normal(b * cfg.d_face * 25), &[b, cfg.d_face, 25]).unwrap();
    let pass = Pass::eval();

    let time = |name: &str, f: &mut dyn FnMut()| {
        let t = Instant::now();
        for _ in 0..3 {
            f();
        }
        println!("{name:24} {:.4}s", t.elapsed().as_secs_f64() / 3.0);
    };

    let enc = model.encode_audio(&pass, &store, &mix).unwrap();
    let t_frames = enc.shape()[2];
    let vps = model.encode_voiceprint(&pass, &store, &vp, t_frames).unwrap();
    let viss = model.encode_visual(&pass, &store, &vis, t_frames).unwrap();
    let codec = model.codec.as_ref().unwrap();
    let enc_a = codec.encode(&pass, &store, &enc).unwrap();
    let mut audio = enc_a.summary.clone();
    for blk in &model.audio_blocks {
        audio = blk.forward(&pass, &store, &audio).unwrap();
    }
    let vp_seg = codec.segment(&vps).unwrap();
    let vis_seg = codec.segment(&viss).unwrap();
    let mut fused = Tensor::concat(&[&audio, &vp_seg.summary, &vis_seg.summary], 1).unwrap();
    for blk in &model.fusion_blocks {
        fused = blk.forward(&pass, &store, &fused).unwrap();
    }
    let blocks = Tensor::concat(&[&enc_a.blocks, &vp_seg.blocks, &vis_seg.blocks], 1).unwrap();

    time("encode_audio", &mut || {
        model.encode_audio(&pass, &store, &mix).unwrap();
    });
    time("codec.encode (stack)", &mut || {
        codec.encode(&pass, &store, &enc).unwrap();
    });
    time("segment vp+vis", &mut || {
        codec.segment(&vps).unwrap();
        codec.segment(&viss).unwrap();
    });
    time("audio blocks (8)", &mut || {
        let mut a = enc_a.summary.clone();
        for blk in &model.audio_blocks {
            a = blk.forward(&pass, &store, &a).unwrap();
        }
    });
    time("fusion blocks (4)", &mut || {
        let mut f = Tensor::concat(&[&audio, &vp_seg.summary, &vis_seg.summary], 1).unwrap();
        for blk in &model.fusion_blocks {
            f = blk.forward(&pass, &store, &f).unwrap();
        }
    });
    time("codec.decode (stack)", &mut || {
        let fe = limuse::gctcn::Encoded {
            summary: fused.clone(),
            blocks: blocks.clone(),
            t_blk: enc_a.t_blk,
            valid_len: enc_a.valid_len,
            padded_len: enc_a.padded_len,
            batch: enc_a.batch,
        };
        codec.decode(&pass, &store, &fused, &fe).unwrap();
    });
    let decoded = {
        let fe = limuse::gctcn::Encoded {
            summary: fused.clone(),
            blocks: blocks.clone(),
            t_blk: enc_a.t_blk,
            valid_len: enc_a.valid_len,
            padded_len: enc_a.padded_len,
            batch: enc_a.batch,
        };
        codec.decode(&pass, &store, &fused, &fe).unwrap()
    };
    time("mask conv + decoder", &mut || {
        let mask = model.mask_conv.forward(&pass, &store, &decoded).unwrap().relu();
        let masked = mask.mul(&enc).unwrap();
        model.decoder.forward(&pass, &store, &masked).unwrap();
    });
}

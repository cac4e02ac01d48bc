//! Binary checkpoint container.
//!
//! Layout (little endian): magic `LMSE-CKPT`, u32 version, u8 flags
//! (bit 0: packed quantized export, bit 1: optimizer moments present),
//! the model config as a length-prefixed `key = value` text block,
//! training state, a quantizer table, a named tensor table (f32 payloads,
//! or packed low-bit codes for quantized weight tensors), and optionally
//! the Adam moments. Tensors serialize at 32-bit precision; training
//! arithmetic stays in f64.

use std::io::{Read, Write};
use std::path::Path;

use super::{config_from_text, config_to_text, Adam};
use crate::error::{Error, Result};
use crate::model::LiMuseModel;
use crate::nn::{LayerQuantizer, ParamStore};
use crate::quant::{pack_codes, quantize_code, unpack_codes, QuantLevelSet};

pub const MAGIC: &[u8; 9] = b"LMSE-CKPT";
pub const VERSION: u32 = 1;

const FLAG_QUANTIZED: u8 = 1;
const FLAG_ADAM: u8 = 2;

/// Scalar training state carried by a checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainState {
    pub epoch: u32,
    pub best_metric: f32,
    pub lr: f32,
}

/// Everything reconstructed from a checkpoint file.
pub struct LoadedModel {
    pub model: LiMuseModel,
    pub store: ParamStore,
    pub state: TrainState,
    pub quantized: bool,
    pub adam: Option<Adam>,
}

/// What to write.
pub struct Checkpoint<'a> {
    pub model: &'a LiMuseModel,
    pub store: &'a ParamStore,
    pub state: TrainState,
    pub adam: Option<&'a Adam>,
    /// Export weights of quantized layers as packed codes.
    pub packed: bool,
}

// ── Byte helpers ─────────────────────────────────────────────────────

struct Writer(Vec<u8>);

impl Writer {
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: impl Iterator<Item = f64>) {
        for v in vs {
            self.f32(v as f32);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data("checkpoint string is not UTF-8".into()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

// ── Save ─────────────────────────────────────────────────────────────

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let Checkpoint { model, store, state, adam, packed } = ckpt;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let mut flags = 0u8;
    if *packed {
        flags |= FLAG_QUANTIZED;
    }
    if adam.is_some() {
        flags |= FLAG_ADAM;
    }
    w.u8(flags);
    w.str(&config_to_text(&model.cfg));
    w.u32(state.epoch);
    w.f32(state.best_metric);
    w.f32(state.lr);

    // quantizer table: one entry per quantized layer that has a quantizer
    let mut quantized: Vec<(&str, &LayerQuantizer, crate::nn::ParamId)> = Vec::new();
    for conv in model.quantized_convs() {
        if let Some(q) = &conv.quant {
            quantized.push((&conv.name, q, conv.weight));
        }
    }
    if let Some(q) = &model.voiceprint_fc.quant {
        quantized.push((&model.voiceprint_fc.name, q, model.voiceprint_fc.weight));
    }
    w.u32(quantized.len() as u32);
    for (name, q, _) in &quantized {
        w.str(name);
        let levels = q.levels.levels();
        w.u32(levels.len() as u32);
        for &g in levels {
            w.i32(g as i32);
        }
        let (alpha, beta) = q.scales(store);
        w.f32(alpha as f32);
        w.f32(beta as f32);
        w.u32(q.biases.len() as u32);
        w.f32s(q.biases.iter().cloned());
        let (lo, hi) = q.act.running_range();
        w.f32(lo as f32);
        w.f32(hi as f32);
        w.u32(q.act.bits);
    }

    // tensor table
    let packed_weights: std::collections::BTreeMap<usize, (&str, &LayerQuantizer)> = if *packed {
        quantized.iter().map(|(n, q, id)| (id.0, (*n, *q))).collect()
    } else {
        Default::default()
    };
    let entries: Vec<_> = store
        .iter()
        .filter(|(_, e)| {
            // packed exports drop the learnable scale parameters; they are
            // reconstructed from the table on load
            !(*packed && e.name.contains(".q.log_"))
        })
        .collect();
    w.u32(entries.len() as u32);
    for (id, entry) in entries {
        w.str(&entry.name);
        match packed_weights.get(&id.0) {
            Some((_, q)) => {
                let qp = q.params(store)?;
                // codes from the full-precision weights through the hard
                // staircase; stored at the level set's bit width
                let codes: Vec<u16> =
                    entry.data.iter().map(|&v| quantize_code(v, &qp)).collect();
                let bits = q.levels.code_bits();
                let bytes = pack_codes(&codes, bits)?;
                w.u8(1); // dtype packed
                w.u32(entry.shape.len() as u32);
                for &d in &entry.shape {
                    w.u32(d as u32);
                }
                w.u8(bits as u8);
                w.u32(codes.len() as u32);
                w.u32(bytes.len() as u32);
                w.0.extend_from_slice(&bytes);
            }
            None => {
                w.u8(0); // dtype f32
                w.u32(entry.shape.len() as u32);
                for &d in &entry.shape {
                    w.u32(d as u32);
                }
                w.f32s(entry.data.iter().cloned());
            }
        }
    }

    // optimizer moments, aligned with store order
    if let Some(adam) = adam {
        let (m, v, t) = adam.state();
        w.u64(t);
        w.u32(store.len() as u32);
        for (id, entry) in store.iter() {
            let zeros = vec![0.0f64; entry.data.len()];
            let ms = m.get(id.0).filter(|x| !x.is_empty()).unwrap_or(&zeros);
            let vs = v.get(id.0).filter(|x| !x.is_empty()).unwrap_or(&zeros);
            w.u32(entry.data.len() as u32);
            w.f32s(ms.iter().cloned());
            w.f32s(vs.iter().cloned());
        }
    }

    std::fs::File::create(path)?.write_all(&w.0)?;
    Ok(())
}

// ── Load ─────────────────────────────────────────────────────────────

pub fn load_checkpoint(path: &Path) -> Result<LoadedModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(9)? != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let flags = r.u8()?;
    let packed = flags & FLAG_QUANTIZED != 0;
    let has_adam = flags & FLAG_ADAM != 0;
    let cfg = config_from_text(&r.str()?)?;
    let state = TrainState { epoch: r.u32()?, best_metric: r.f32()?, lr: r.f32()? };

    let mut store = ParamStore::new();
    let mut model = LiMuseModel::build(&mut store, &cfg, 0)?;

    // quantizer table
    struct QEntry {
        name: String,
        levels: QuantLevelSet,
        alpha: f64,
        beta: f64,
        biases: Vec<f64>,
        act_range: (f64, f64),
        act_bits: u32,
    }
    let nq = r.u32()? as usize;
    let mut qentries = Vec::with_capacity(nq);
    for _ in 0..nq {
        let name = r.str()?;
        let nlevels = r.u32()? as usize;
        let mut gamma = Vec::with_capacity(nlevels);
        for _ in 0..nlevels {
            gamma.push(r.i32()? as i64);
        }
        let alpha = r.f32()? as f64;
        let beta = r.f32()? as f64;
        let nb = r.u32()? as usize;
        let biases = r.f32s(nb)?;
        let lo = r.f32()? as f64;
        let hi = r.f32()? as f64;
        let act_bits = r.u32()?;
        qentries.push(QEntry {
            name,
            levels: QuantLevelSet::from_levels(gamma)?,
            alpha,
            beta,
            biases,
            act_range: (lo, hi),
            act_bits,
        });
    }
    // attach quantizers by layer name
    let mut dequant: std::collections::BTreeMap<String, (f64, Vec<i64>)> = Default::default();
    for qe in &qentries {
        dequant.insert(
            format!("{}.weight", qe.name),
            (qe.alpha, qe.levels.levels().to_vec()),
        );
    }
    {
        let mut attach = |convs: Vec<&mut crate::nn::Conv1d>| {
            for c in convs {
                if let Some(qe) = qentries.iter().find(|q| q.name == c.name) {
                    c.quant = Some(LayerQuantizer::from_parts(
                        &mut store,
                        &qe.name,
                        qe.levels.clone(),
                        qe.biases.clone(),
                        qe.alpha,
                        qe.beta,
                        qe.act_bits,
                        qe.act_range,
                        packed,
                    ));
                }
            }
        };
        attach(model.quantized_convs_mut());
        if let Some(qe) = qentries.iter().find(|q| q.name == model.voiceprint_fc.name) {
            model.voiceprint_fc.quant = Some(LayerQuantizer::from_parts(
                &mut store,
                &qe.name,
                qe.levels.clone(),
                qe.biases.clone(),
                qe.alpha,
                qe.beta,
                qe.act_bits,
                qe.act_range,
                packed,
            ));
        }
    }

    // tensor table
    let ntensors = r.u32()? as usize;
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..ntensors {
        let name = r.str()?;
        let dtype = r.u8()?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let data: Vec<f64> = match dtype {
            0 => r.f32s(numel)?,
            1 => {
                let bits = r.u8()? as u32;
                let count = r.u32()? as usize;
                let nbytes = r.u32()? as usize;
                let payload = r.take(nbytes)?;
                let codes = unpack_codes(payload, bits, count)?;
                let (alpha, gamma) = dequant.get(&name).ok_or_else(|| {
                    Error::Data(format!("packed tensor `{name}` has no quantizer entry"))
                })?;
                codes
                    .iter()
                    .map(|&c| {
                        gamma
                            .get(c as usize)
                            .map(|&g| alpha * g as f64)
                            .ok_or_else(|| Error::Data(format!("code {c} out of range in `{name}`")))
                    })
                    .collect::<Result<Vec<f64>>>()?
            }
            other => return Err(Error::Data(format!("unknown tensor dtype {other}"))),
        };
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint names unknown parameter `{name}`")))?;
        if store.shape(id) != dims.as_slice() {
            return Err(Error::Data(format!(
                "parameter `{name}` shape mismatch: checkpoint {dims:?} vs model {:?}",
                store.shape(id)
            )));
        }
        store.set_data(id, data);
        seen.insert(name);
    }
    // every model parameter must have been covered (the reconstructed
    // log-scale parameters of packed exports are exempt)
    for (_, entry) in store.iter() {
        if !seen.contains(&entry.name) && !(packed && entry.name.contains(".q.log_")) {
            return Err(Error::Data(format!("checkpoint is missing parameter `{}`", entry.name)));
        }
    }

    // optimizer moments
    let adam = if has_adam {
        let t = r.u64()?;
        let n = r.u32()? as usize;
        if n != store.len() {
            return Err(Error::Data(format!(
                "optimizer state covers {n} parameters, model has {}",
                store.len()
            )));
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            m.push(r.f32s(len)?);
            v.push(r.f32s(len)?);
        }
        let mut adam = Adam::new(&super::TrainConfig::default());
        adam.restore(m, v, t);
        Some(adam)
    } else {
        None
    };

    Ok(LoadedModel { model, store, state, quantized: packed, adam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::Pass;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("limuse_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn micro() -> ModelConfig {
        ModelConfig {
            n: 8,
            l: 8,
            s: 8,
            k: 2,
            x: 1,
            r_a: 1,
            r_f: 1,
            u: 12,
            d_face: 6,
            ..Default::default()
        }
    }

    fn probe(model: &LiMuseModel, store: &ParamStore, quantized: bool) -> Vec<f64> {
        let mut rng = Rng::new(1234);
        let mix = Tensor::from_vec(rng.fill_uniform(2 * 300, -0.5, 0.5), &[1, 2, 300]).unwrap();
        let vp = Tensor::from_vec(rng.fill_normal(12), &[1, 12]).unwrap();
        let vis = Tensor::from_vec(rng.fill_normal(6 * 3), &[1, 6, 3]).unwrap();
        let pass = if quantized { Pass::quant_eval() } else { Pass::eval() };
        model.forward(&pass, store, &mix, &vp, &vis).unwrap().wave.data().to_vec()
    }

    #[test]
    fn full_precision_round_trip_is_bit_identical_at_f32() {
        let cfg = micro();
        let mut store = ParamStore::new();
        let model = LiMuseModel::build(&mut store, &cfg, 7).unwrap();
        let path = tmp("fp.ckpt");
        let state = TrainState { epoch: 3, best_metric: 1.5, lr: 1e-3 };
        save_checkpoint(
            &path,
            &Checkpoint { model: &model, store: &store, state, adam: None, packed: false },
        )
        .unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.state, state);
        assert!(!loaded.quantized);

        // save the loaded model again: forward outputs of the two loads
        // must agree bit-for-bit (values are f32-representable now)
        let path2 = tmp("fp2.ckpt");
        save_checkpoint(
            &path2,
            &Checkpoint {
                model: &loaded.model,
                store: &loaded.store,
                state,
                adam: None,
                packed: false,
            },
        )
        .unwrap();
        let loaded2 = load_checkpoint(&path2).unwrap();
        let out1 = probe(&loaded.model, &loaded.store, false);
        let out2 = probe(&loaded2.model, &loaded2.store, false);
        assert_eq!(out1, out2, "forward outputs differ after save/load/save/load");
        // and the two files are byte-identical from the f32 fixpoint on
        assert_eq!(std::fs::read(&path2).unwrap(), {
            let path3 = tmp("fp3.ckpt");
            save_checkpoint(
                &path3,
                &Checkpoint {
                    model: &loaded2.model,
                    store: &loaded2.store,
                    state,
                    adam: None,
                    packed: false,
                },
            )
            .unwrap();
            std::fs::read(&path3).unwrap()
        });
    }

    #[test]
    fn quantized_export_reloads_with_grid_weights() {
        let cfg = micro();
        let mut store = ParamStore::new();
        let mut model = LiMuseModel::build(&mut store, &cfg, 8).unwrap();
        model.attach_quantizers(&mut store, 99).unwrap();
        let path = tmp("q.ckpt");
        save_checkpoint(
            &path,
            &Checkpoint {
                model: &model,
                store: &store,
                state: TrainState::default(),
                adam: None,
                packed: true,
            },
        )
        .unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.quantized);
        // every quantized layer's weights live on its alpha*gamma grid with
        // at most |gamma| distinct values
        for conv in loaded.model.quantized_convs() {
            let q = conv.quant.as_ref().expect("quantizer restored");
            assert!(q.frozen);
            let w = loaded.store.data(conv.weight);
            let mut distinct = std::collections::BTreeSet::new();
            for &v in w {
                distinct.insert(v.to_bits());
            }
            assert!(distinct.len() <= q.levels.levels().len(), "{}", conv.name);
        }
        // quantized eval is reproducible across two loads of the same file
        let again = load_checkpoint(&path).unwrap();
        assert_eq!(
            probe(&loaded.model, &loaded.store, true),
            probe(&again.model, &again.store, true)
        );
        // decoder weights stay full precision (byte-identical to source)
        let dec_id = loaded.store.find("decoder.weight").unwrap();
        let src_id = store.find("decoder.weight").unwrap();
        let src_f32: Vec<f64> = store.data(src_id).iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(loaded.store.data(dec_id), &src_f32[..]);
    }

    #[test]
    fn adam_state_round_trips() {
        let cfg = micro();
        let mut store = ParamStore::new();
        let model = LiMuseModel::build(&mut store, &cfg, 9).unwrap();
        let tcfg = super::super::TrainConfig::default();
        let mut adam = Adam::new(&tcfg);
        // run a fake step so the moments are nonzero
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in &ids {
            let n = store.data(*id).len();
            store.set_grad(*id, vec![0.01; n]);
        }
        adam.step(&mut store, 1e-3);
        let path = tmp("adam.ckpt");
        save_checkpoint(
            &path,
            &Checkpoint {
                model: &model,
                store: &store,
                state: TrainState::default(),
                adam: Some(&adam),
                packed: false,
            },
        )
        .unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let restored = loaded.adam.expect("adam state present");
        let (m0, _, t0) = adam.state();
        let (m1, _, t1) = restored.state();
        assert_eq!(t0, t1);
        for (a, b) in m0.iter().zip(m1) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-7, "moment drifted: {x} vs {y}");
            }
        }
    }

    #[test]
    fn corrupted_and_missing_tensor_errors() {
        let cfg = micro();
        let mut store = ParamStore::new();
        let model = LiMuseModel::build(&mut store, &cfg, 10).unwrap();
        let path = tmp("bad.ckpt");
        save_checkpoint(
            &path,
            &Checkpoint {
                model: &model,
                store: &store,
                state: TrainState::default(),
                adam: None,
                packed: false,
            },
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"LMSE-WRONG").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}

//! Context codec: nonlinear temporal compression and decompression.
//!
//! The encoder cuts the feature sequence into 50%-overlapped context
//! windows, runs a GC-TCN stack along each window's context axis and means
//! it into one summary vector per window; downstream blocks then work at
//! the window rate instead of the frame rate. The decoder broadcasts each
//! processed summary back over its window, runs another GC-TCN stack, and
//! overlap-adds (dividing by the per-position overlap count) to restore
//! the original length.

use super::GcTcnBlock;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ParamStore, Pass};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Everything the encoder hands to the decoder.
pub struct Encoded {
    /// Summary sequence `[B, C, T_blk]`.
    pub summary: Tensor,
    /// Raw (unprocessed) context windows `[B*T_blk, C, S]`.
    pub blocks: Tensor,
    pub t_blk: usize,
    pub valid_len: usize,
    pub padded_len: usize,
    pub batch: usize,
}

#[derive(Clone, Debug)]
pub struct ContextCodec {
    /// Context size `S` in frames; the hop is `S/2` (50% overlap).
    pub size: usize,
    pub enc_blocks: Vec<GcTcnBlock>,
    pub dec_blocks: Vec<GcTcnBlock>,
}

impl ContextCodec {
    /// Stack depth 2 on both sides, dilation 1, shared kernel size.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        size: usize,
        enc_channels: usize,
        dec_channels: usize,
        groups: usize,
        kernel: usize,
        depth: usize,
        causal: bool,
    ) -> Result<Self> {
        if size < 2 || size % 2 != 0 {
            return Err(Error::invalid("context_codec", "context size must be even and >= 2"));
        }
        let mut enc_blocks = Vec::with_capacity(depth);
        let mut dec_blocks = Vec::with_capacity(depth);
        for i in 0..depth {
            enc_blocks.push(GcTcnBlock::init(
                store,
                rng,
                &format!("{name}.enc.{i}"),
                enc_channels,
                groups,
                kernel,
                1,
                causal,
            )?);
            dec_blocks.push(GcTcnBlock::init(
                store,
                rng,
                &format!("{name}.dec.{i}"),
                dec_channels,
                groups,
                kernel,
                1,
                causal,
            )?);
        }
        Ok(ContextCodec { size, enc_blocks, dec_blocks })
    }

    /// Identity codec (no processing stacks); decode(encode(x)) with zero
    /// summaries reproduces x exactly.
    pub fn identity(size: usize) -> Self {
        ContextCodec { size, enc_blocks: Vec::new(), dec_blocks: Vec::new() }
    }

    pub fn hop(&self) -> usize {
        self.size / 2
    }

    /// Minimal zero padding so `T_blk = (L' - S)/(S/2) + 1` is a positive
    /// integer, and the resulting block count.
    pub fn plan(&self, len: usize) -> (usize, usize) {
        let (s, hop) = (self.size, self.hop());
        if len <= s {
            return (s, 1);
        }
        let padded = s + (len - s).div_ceil(hop) * hop;
        (padded, (padded - s) / hop + 1)
    }

    /// Segment into overlapped windows and their per-window means, without
    /// any processing stack (used by the auxiliary streams).
    pub fn segment(&self, x: &Tensor) -> Result<Encoded> {
        self.encode_inner(None, None, x)
    }

    /// Full encode: segment, process each window with the encoder stack,
    /// mean over the context axis.
    pub fn encode(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Encoded> {
        self.encode_inner(Some(pass), Some(store), x)
    }

    fn encode_inner(
        &self,
        pass: Option<&Pass>,
        store: Option<&ParamStore>,
        x: &Tensor,
    ) -> Result<Encoded> {
        let shape = x.shape();
        if shape.len() != 3 {
            return Err(Error::invalid("context_codec", "expected [B, C, L]"));
        }
        let (b, c, len) = (shape[0], shape[1], shape[2]);
        let (padded_len, t_blk) = self.plan(len);
        let padded = if padded_len == len { x.clone() } else { x.pad_last(0, padded_len - len) };
        let blocks = padded.unfold_frames(self.size, self.hop())?;
        let mut processed = blocks.clone();
        if let (Some(pass), Some(store)) = (pass, store) {
            for blk in &self.enc_blocks {
                processed = blk.forward(pass, store, &processed)?;
            }
        }
        let summary = processed
            .mean_axis(2)?
            .reshape(&[b, t_blk, c])?
            .swap12()?;
        Ok(Encoded { summary, blocks, t_blk, valid_len: len, padded_len, batch: b })
    }

    /// Decode processed summaries back to frame rate: broadcast-add each
    /// summary over its saved window, run the decoder stack, overlap-add
    /// with overlap-count normalization, trim to the original length.
    pub fn decode(
        &self,
        pass: &Pass,
        store: &ParamStore,
        summary_processed: &Tensor,
        enc: &Encoded,
    ) -> Result<Tensor> {
        let sshape = summary_processed.shape();
        let bshape = enc.blocks.shape();
        if sshape.len() != 3 || sshape[2] != enc.t_blk {
            return Err(Error::ShapeMismatch {
                op: "context_decode",
                lhs: sshape.to_vec(),
                rhs: vec![enc.batch, bshape[1], enc.t_blk],
            });
        }
        if sshape[1] != bshape[1] {
            return Err(Error::ShapeMismatch {
                op: "context_decode",
                lhs: sshape.to_vec(),
                rhs: bshape.to_vec(),
            });
        }
        let (b, c) = (enc.batch, bshape[1]);
        let per_block = summary_processed
            .swap12()?
            .reshape(&[b * enc.t_blk, c, 1])?;
        let mut d = enc.blocks.add(&per_block)?;
        for blk in &self.dec_blocks {
            d = blk.forward(pass, store, &d)?;
        }
        let folded = d.fold_frames(b, self.hop(), enc.padded_len)?;
        if enc.valid_len == enc.padded_len {
            Ok(folded)
        } else {
            folded.slice_axis(2, 0, enc.valid_len)
        }
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv1d> {
        let mut v = Vec::new();
        for blk in self.enc_blocks.iter_mut().chain(self.dec_blocks.iter_mut()) {
            v.extend(blk.convs_mut());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Pass;

    #[test]
    fn block_count_formula() {
        let cc = ContextCodec::identity(32);
        assert_eq!(cc.plan(64), (64, 3)); // starts at 0, 16, 32
        assert_eq!(cc.plan(32), (32, 1)); // single block
        assert_eq!(cc.plan(17), (32, 1));
        assert_eq!(cc.plan(100), (112, 6));
        assert_eq!(cc.plan(48000), (48000, 2999));
    }

    #[test]
    fn identity_codec_round_trips_exactly() {
        let cc = ContextCodec::identity(32);
        let store = ParamStore::new();
        let pass = Pass::eval();
        let mut rng = Rng::new(12);
        for len in [17usize, 32, 100, 1000] {
            let x = Tensor::from_vec(rng.fill_normal(2 * 3 * len), &[2, 3, len]).unwrap();
            let enc = cc.segment(&x).unwrap();
            let zeros = Tensor::zeros(&[2, 3, enc.t_blk]);
            let y = cc.decode(&pass, &store, &zeros, &enc).unwrap();
            assert_eq!(y.shape(), &[2, 3, len]);
            for (a, b) in x.data().iter().zip(y.data()) {
                assert!((a - b).abs() < 1e-12, "round trip broke: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_block_summary_is_block_mean() {
        let cc = ContextCodec::identity(32);
        let mut rng = Rng::new(13);
        let x = Tensor::from_vec(rng.fill_normal(32), &[1, 1, 32]).unwrap();
        let enc = cc.segment(&x).unwrap();
        assert_eq!(enc.t_blk, 1);
        let mean: f64 = x.data().iter().sum::<f64>() / 32.0;
        assert!((enc.summary.item() - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_input_zero_biases_gives_zero_summary() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(14);
        let cc =
            ContextCodec::init(&mut store, &mut rng, "cc", 16, 8, 8, 2, 3, 2, false).unwrap();
        // zero every conv bias and norm bias so affine paths preserve zero
        let bias_ids: Vec<_> = store
            .iter()
            .filter(|(_, e)| e.name.ends_with(".bias"))
            .map(|(id, _)| id)
            .collect();
        for id in bias_ids {
            let n = store.data(id).len();
            store.set_data(id, vec![0.0; n]);
        }
        let x = Tensor::zeros(&[1, 8, 40]);
        let enc = cc.encode(&Pass::eval(), &store, &x).unwrap();
        for &v in enc.summary.data() {
            assert_eq!(v, 0.0, "zero input must give zero summary with zero biases");
        }
    }

    #[test]
    fn processing_stacks_preserve_length() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(15);
        let cc =
            ContextCodec::init(&mut store, &mut rng, "cc", 16, 8, 8, 2, 3, 2, false).unwrap();
        let pass = Pass::eval();
        for len in [23usize, 64, 129] {
            let x = Tensor::from_vec(rng.fill_normal(8 * len), &[1, 8, len]).unwrap();
            let enc = cc.encode(&pass, &store, &x).unwrap();
            assert_eq!(enc.summary.shape(), &[1, 8, enc.t_blk]);
            let y = cc.decode(&pass, &store, &enc.summary, &enc).unwrap();
            assert_eq!(y.shape(), &[1, 8, len]);
        }
    }
}

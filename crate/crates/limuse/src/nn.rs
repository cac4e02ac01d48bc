//! Layer primitives over a flat parameter store.
//!
//! Parameters live in a [`ParamStore`] (stable indices, named entries);
//! layer structs hold `ParamId`s plus hyperparameters. A [`Pass`] describes
//! one forward execution: whether a tape records gradients and which
//! quantization mode applies. Binding a parameter on a pass creates the
//! tape leaf and remembers it so gradients can be harvested back into the
//! store after `backward`.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::quant::{
    ideal_quantize, init_quantizer, soft_quantize, ActivationQuantizer, QuantLevelSet,
    QuantizerParams,
};
use crate::rng::Rng;
use crate::tensor::{NormMode, PadMode, Tape, Tensor};

// ── Parameter store ──────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub data: Rc<Vec<f64>>,
    pub shape: Vec<usize>,
    pub grad: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> ParamId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.entries.push(ParamEntry {
            name: name.into(),
            data: Rc::new(data),
            shape: shape.to_vec(),
            grad: None,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn shared(&self, id: ParamId) -> Rc<Vec<f64>> {
        Rc::clone(&self.entries[id.0].data)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    /// Replace the values of a parameter (same length).
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) {
        debug_assert_eq!(data.len(), self.entries[id.0].data.len());
        self.entries[id.0].data = Rc::new(data);
    }

    /// In-place mutable access (clones only if a tape still holds the buffer).
    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Rc::make_mut(&mut self.entries[id.0].data)
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn set_grad(&mut self, id: ParamId, g: Vec<f64>) {
        self.entries[id.0].grad = Some(g);
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.entries[id.0].grad {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            slot => *slot = Some(g.to_vec()),
        }
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Deep snapshot of all values (for best-checkpoint tracking).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.data.as_ref().clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            e.data = Rc::new(s.clone());
        }
    }
}

// ── Forward pass context ─────────────────────────────────────────────

/// Quantization behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Full-precision weights and activations.
    Standard,
    /// Soft weight quantization at the given temperature, activation
    /// quantization with batch statistics (updates running estimates).
    QatTrain { temperature: f64 },
    /// Hard weight quantization, activation quantization with the stored
    /// running statistics.
    QuantEval,
}

pub struct Pass<'a> {
    pub tape: Option<&'a Tape>,
    pub mode: Mode,
    bindings: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'a> Pass<'a> {
    pub fn train(tape: &'a Tape) -> Self {
        Pass { tape: Some(tape), mode: Mode::Standard, bindings: RefCell::new(Vec::new()) }
    }

    pub fn qat_train(tape: &'a Tape, temperature: f64) -> Self {
        Pass {
            tape: Some(tape),
            mode: Mode::QatTrain { temperature },
            bindings: RefCell::new(Vec::new()),
        }
    }

    pub fn eval() -> Pass<'static> {
        Pass { tape: None, mode: Mode::Standard, bindings: RefCell::new(Vec::new()) }
    }

    pub fn quant_eval() -> Pass<'static> {
        Pass { tape: None, mode: Mode::QuantEval, bindings: RefCell::new(Vec::new()) }
    }

    /// Leaf tensor for a parameter; tracked when the pass has a tape.
    pub fn bind(&self, store: &ParamStore, id: ParamId) -> Result<Tensor> {
        match self.tape {
            Some(tape) => {
                let t = Tensor::leaf(tape, store.shared(id), store.shape(id))?
                    .named(store.name(id));
                self.bindings.borrow_mut().push((id, t.clone()));
                Ok(t)
            }
            None => Tensor::from_shared(store.shared(id), store.shape(id)),
        }
    }

    /// Copy accumulated leaf gradients back into the store.
    pub fn harvest_grads(&self, store: &mut ParamStore) {
        for (id, t) in self.bindings.borrow().iter() {
            if let Some(g) = t.grad() {
                store.accumulate_grad(*id, &g);
            }
        }
    }
}

// ── Quantizer attachment ─────────────────────────────────────────────

/// What a layer is, for quantization eligibility and accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Linear,
    PRelu,
    Norm,
}

/// The audio decoder, PReLU activations and normalizations stay in full
/// precision.
pub fn ensure_quantizable(kind: LayerKind) -> Result<()> {
    match kind {
        LayerKind::Conv | LayerKind::Linear => Ok(()),
        other => Err(Error::invalid(
            "attach_quantizer",
            format!("layer kind {other:?} is excluded from quantization"),
        )),
    }
}

/// Weight quantizer plus activation quantizer for one layer. The staircase
/// biases are fixed; `log_alpha`/`log_beta` are store parameters so the
/// scales stay positive by construction and learn with everything else.
#[derive(Clone, Debug)]
pub struct LayerQuantizer {
    pub levels: QuantLevelSet,
    pub biases: Vec<f64>,
    pub log_alpha: ParamId,
    pub log_beta: ParamId,
    pub act: ActivationQuantizer,
    /// Weights already sit on the quantizer grid (loaded from a packed
    /// export); quantized inference uses them as-is.
    pub frozen: bool,
}

impl LayerQuantizer {
    pub fn init(
        store: &mut ParamStore,
        layer_name: &str,
        kind: LayerKind,
        weights: &[f64],
        levels: &QuantLevelSet,
        act_bits: u32,
        seed: u64,
    ) -> Result<Self> {
        ensure_quantizable(kind)?;
        let qp = init_quantizer(weights, levels, seed)?;
        let log_alpha =
            store.add(format!("{layer_name}.q.log_alpha"), vec![qp.alpha.ln()], &[1]);
        let log_beta = store.add(format!("{layer_name}.q.log_beta"), vec![0.0], &[1]);
        Ok(LayerQuantizer {
            levels: levels.clone(),
            biases: qp.biases,
            log_alpha,
            log_beta,
            act: ActivationQuantizer::new(act_bits),
            frozen: false,
        })
    }

    /// Rebuild a quantizer from checkpoint fields. Reuses the layer's
    /// `.q.log_alpha` / `.q.log_beta` parameters when they already exist in
    /// the store, otherwise creates them from the stored scales.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        store: &mut ParamStore,
        layer_name: &str,
        levels: QuantLevelSet,
        biases: Vec<f64>,
        alpha: f64,
        beta: f64,
        act_bits: u32,
        act_range: (f64, f64),
        frozen: bool,
    ) -> Self {
        let la_name = format!("{layer_name}.q.log_alpha");
        let lb_name = format!("{layer_name}.q.log_beta");
        let log_alpha = store
            .find(&la_name)
            .unwrap_or_else(|| store.add(la_name, vec![alpha.max(1e-12).ln()], &[1]));
        let log_beta = store
            .find(&lb_name)
            .unwrap_or_else(|| store.add(lb_name, vec![beta.max(1e-12).ln()], &[1]));
        let act = ActivationQuantizer::new(act_bits);
        act.set_running_range(act_range.0, act_range.1);
        LayerQuantizer { levels, biases, log_alpha, log_beta, act, frozen }
    }

    /// Current (alpha, beta) read from the store.
    pub fn scales(&self, store: &ParamStore) -> (f64, f64) {
        (store.data(self.log_alpha)[0].exp(), store.data(self.log_beta)[0].exp())
    }

    pub fn params(&self, store: &ParamStore) -> Result<QuantizerParams> {
        let (a, b) = self.scales(store);
        QuantizerParams::new(self.levels.clone(), self.biases.clone(), a, b)
    }
}

/// Weight tensor a quantized layer should use under the pass mode.
fn effective_weight(
    pass: &Pass,
    store: &ParamStore,
    weight: ParamId,
    quant: Option<&LayerQuantizer>,
) -> Result<Tensor> {
    let raw = pass.bind(store, weight)?;
    let Some(q) = quant else { return Ok(raw) };
    match pass.mode {
        Mode::Standard => Ok(raw),
        Mode::QatTrain { temperature } => {
            let alpha = pass.bind(store, q.log_alpha)?.exp();
            let beta = pass.bind(store, q.log_beta)?.exp();
            soft_quantize(&raw, &alpha, &beta, &q.levels, &q.biases, temperature)
        }
        Mode::QuantEval => {
            if q.frozen {
                // weights were reconstructed from packed codes; they are
                // already exact grid values
                return Ok(raw);
            }
            let qp = q.params(store)?;
            let data = raw.data().iter().map(|&w| ideal_quantize(w, &qp)).collect();
            Tensor::from_vec(data, raw.shape())
        }
    }
}

/// Activation quantization of a layer input under the pass mode.
fn quantize_input(pass: &Pass, x: &Tensor, quant: Option<&LayerQuantizer>) -> Result<Tensor> {
    let Some(q) = quant else { return Ok(x.clone()) };
    match pass.mode {
        Mode::Standard => Ok(x.clone()),
        Mode::QatTrain { .. } => q.act.quantize(x, true),
        Mode::QuantEval => q.act.quantize(x, false),
    }
}

// ── Layers ───────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad: PadMode,
    pub quant: Option<LayerQuantizer>,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
        pad: PadMode,
    ) -> Self {
        Self::init_with_bias(store, rng, name, cin, cout, k, stride, dilation, groups, pad, true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init_with_bias(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
        pad: PadMode,
        with_bias: bool,
    ) -> Self {
        let name = name.into();
        let fan_in = (cin / groups) * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = rng.fill_uniform(cout * (cin / groups) * k, -bound, bound);
        let weight = store.add(format!("{name}.weight"), w, &[cout, cin / groups, k]);
        let bias = if with_bias {
            let b = rng.fill_uniform(cout, -bound, bound);
            Some(store.add(format!("{name}.bias"), b, &[cout]))
        } else {
            None
        };
        Conv1d { name, weight, bias, cin, cout, k, stride, dilation, groups, pad, quant: None }
    }

    /// Pointwise (k=1) convolution, the FC-per-timestep workhorse.
    pub fn pointwise(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: impl Into<String>,
        cin: usize,
        cout: usize,
    ) -> Self {
        Self::init(store, rng, name, cin, cout, 1, 1, 1, 1, PadMode::Valid)
    }

    pub fn attach_quantizer(
        &mut self,
        store: &mut ParamStore,
        levels: &QuantLevelSet,
        act_bits: u32,
        seed: u64,
    ) -> Result<()> {
        let w = store.data(self.weight).to_vec();
        self.quant = Some(LayerQuantizer::init(
            store,
            &self.name,
            LayerKind::Conv,
            &w,
            levels,
            act_bits,
            seed,
        )?);
        Ok(())
    }

    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let w = effective_weight(pass, store, self.weight, self.quant.as_ref())?;
        let b = match self.bias {
            Some(id) => Some(pass.bind(store, id)?),
            None => None,
        };
        let x = quantize_input(pass, x, self.quant.as_ref())?;
        x.conv1d_grouped(&w, b.as_ref(), self.stride, self.dilation, self.pad, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let name = name.into();
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let w = rng.fill_uniform(cin * cout * k, -bound, bound);
        let weight = store.add(format!("{name}.weight"), w, &[cin, cout, k]);
        // bias-free: the waveform decoder must stay linear in its input
        ConvTranspose1d { name, weight, bias: None, cin, cout, k, stride }
    }

    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        // always full precision: the audio decoder is excluded from quantization
        let w = pass.bind(store, self.weight)?;
        let b = match self.bias {
            Some(id) => Some(pass.bind(store, id)?),
            None => None,
        };
        x.conv_transpose1d(&w, b.as_ref(), self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    /// Stored as `[fan_in, fan_out]` so forward is `x . W + b`.
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub quant: Option<LayerQuantizer>,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let name = name.into();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = rng.fill_uniform(fan_in * fan_out, -bound, bound);
        let weight = store.add(format!("{name}.weight"), w, &[fan_in, fan_out]);
        let b = rng.fill_uniform(fan_out, -bound, bound);
        let bias = Some(store.add(format!("{name}.bias"), b, &[fan_out]));
        Linear { name, weight, bias, fan_in, fan_out, quant: None }
    }

    pub fn attach_quantizer(
        &mut self,
        store: &mut ParamStore,
        levels: &QuantLevelSet,
        act_bits: u32,
        seed: u64,
    ) -> Result<()> {
        let w = store.data(self.weight).to_vec();
        self.quant = Some(LayerQuantizer::init(
            store,
            &self.name,
            LayerKind::Linear,
            &w,
            levels,
            act_bits,
            seed,
        )?);
        Ok(())
    }

    /// `x: [B, fan_in] -> [B, fan_out]`.
    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let w = effective_weight(pass, store, self.weight, self.quant.as_ref())?;
        let x = quantize_input(pass, x, self.quant.as_ref())?;
        let mut y = x.matmul(&w)?;
        if let Some(id) = self.bias {
            let b = pass.bind(store, id)?;
            y = y.add(&b)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct PReluLayer {
    pub name: String,
    pub slopes: ParamId,
    pub channels: usize,
}

impl PReluLayer {
    pub fn init(store: &mut ParamStore, name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        let slopes = store.add(format!("{name}.slopes"), vec![0.25; channels], &[channels]);
        PReluLayer { name, slopes, channels }
    }

    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.prelu(&pass.bind(store, self.slopes)?)
    }
}

#[derive(Clone, Debug)]
pub struct NormLayer {
    pub name: String,
    pub gain: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub mode: NormMode,
}

impl NormLayer {
    pub fn init(
        store: &mut ParamStore,
        name: impl Into<String>,
        channels: usize,
        mode: NormMode,
    ) -> Self {
        let name = name.into();
        let gain = store.add(format!("{name}.gain"), vec![1.0; channels], &[channels]);
        let bias = store.add(format!("{name}.bias"), vec![0.0; channels], &[channels]);
        NormLayer { name, gain, bias, channels, mode }
    }

    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&pass.bind(store, self.gain)?, &pass.bind(store, self.bias)?, self.mode)
    }
}

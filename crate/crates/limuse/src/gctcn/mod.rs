//! Group-communication TCN blocks.
//!
//! A feature vector of width `C` is split into `K` contiguous groups of
//! width `C/K`. A TAC (transform-average-concatenate) module exchanges
//! information across groups, then one weight-shared depthwise-separable
//! TCN processes every group; sharing the TCN across groups is what cuts
//! the model width by a factor of `K`.

mod codec;

pub use codec::{ContextCodec, Encoded};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, NormLayer, ParamStore, Pass, PReluLayer};
use crate::rng::Rng;
use crate::tensor::{NormMode, PadMode, Tensor};

/// Transform-average-concatenate over groups, applied per timestep.
///
/// One parameter set serves all `K` groups:
/// `f_i = PReLU(FC1(g_i))`, `fbar = mean_i f_i`, `fhat = PReLU(FC2(fbar))`,
/// `ghat_i = g_i + PReLU(FC3([f_i ; fhat]))`.
#[derive(Clone, Debug)]
pub struct TacModule {
    pub fc1: Conv1d,
    pub p1: PReluLayer,
    pub fc2: Conv1d,
    pub p2: PReluLayer,
    pub fc3: Conv1d,
    pub p3: PReluLayer,
    pub groups: usize,
    pub group_width: usize,
    pub hidden: usize,
}

impl TacModule {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        groups: usize,
        group_width: usize,
    ) -> Self {
        // 3x expansion of the group width for the exchange space
        let hidden = 3 * group_width;
        TacModule {
            fc1: Conv1d::pointwise(store, rng, format!("{name}.fc1"), group_width, hidden),
            p1: PReluLayer::init(store, format!("{name}.p1"), hidden),
            fc2: Conv1d::pointwise(store, rng, format!("{name}.fc2"), hidden, hidden),
            p2: PReluLayer::init(store, format!("{name}.p2"), hidden),
            fc3: Conv1d::pointwise(store, rng, format!("{name}.fc3"), 2 * hidden, group_width),
            p3: PReluLayer::init(store, format!("{name}.p3"), group_width),
            groups,
            group_width,
            hidden,
        }
    }

    /// `x: [B*K, C/K, T]` (groups flattened into the batch axis).
    pub fn forward(
        &self,
        pass: &Pass,
        store: &ParamStore,
        x: &Tensor,
        batch: usize,
    ) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        if shape.len() != 3 || shape[0] != batch * self.groups || shape[1] != self.group_width {
            return Err(Error::invalid(
                "tac",
                format!(
                    "expected [{}x{}, {}, T], got {shape:?}",
                    batch, self.groups, self.group_width
                ),
            ));
        }
        let t = shape[2];
        let (k, h) = (self.groups, self.hidden);
        let f = self.p1.forward(pass, store, &self.fc1.forward(pass, store, x)?)?;
        let fbar = f.reshape(&[batch, k, h, t])?.mean_axis(1)?;
        let fhat = self.p2.forward(pass, store, &self.fc2.forward(pass, store, &fbar)?)?;
        let fhat_tiled = fhat
            .reshape(&[batch, 1, h, t])?
            .broadcast_to(&[batch, k, h, t])?
            .reshape(&[batch * k, h, t])?;
        let cat = Tensor::concat(&[&f, &fhat_tiled], 1)?;
        let update = self.p3.forward(pass, store, &self.fc3.forward(pass, store, &cat)?)?;
        x.add(&update)
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv1d> {
        vec![&mut self.fc1, &mut self.fc2, &mut self.fc3]
    }
}

/// Depthwise-separable TCN applied per group with shared weights:
/// pointwise in, PReLU, norm, dilated depthwise, PReLU, norm, pointwise out.
#[derive(Clone, Debug)]
pub struct TcnModule {
    pub pw_in: Conv1d,
    pub prelu1: PReluLayer,
    pub norm1: NormLayer,
    pub dw: Conv1d,
    pub prelu2: PReluLayer,
    pub norm2: NormLayer,
    pub pw_out: Conv1d,
    pub hidden: usize,
}

impl TcnModule {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        group_width: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
    ) -> Self {
        // 2x bottleneck expansion inside the block
        let hidden = 2 * group_width;
        let (pad, norm_mode) = if causal {
            (PadMode::Causal, NormMode::Cumulative)
        } else {
            (PadMode::Same, NormMode::Global)
        };
        TcnModule {
            pw_in: Conv1d::pointwise(store, rng, format!("{name}.pw_in"), group_width, hidden),
            prelu1: PReluLayer::init(store, format!("{name}.prelu1"), hidden),
            norm1: NormLayer::init(store, format!("{name}.norm1"), hidden, norm_mode),
            dw: Conv1d::init(
                store,
                rng,
                format!("{name}.dw"),
                hidden,
                hidden,
                kernel,
                1,
                dilation,
                hidden,
                pad,
            ),
            prelu2: PReluLayer::init(store, format!("{name}.prelu2"), hidden),
            norm2: NormLayer::init(store, format!("{name}.norm2"), hidden, norm_mode),
            pw_out: Conv1d::pointwise(store, rng, format!("{name}.pw_out"), hidden, group_width),
            hidden,
        }
    }

    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = self.pw_in.forward(pass, store, x)?;
        let y = self.prelu1.forward(pass, store, &y)?;
        let y = self.norm1.forward(pass, store, &y)?;
        let y = self.dw.forward(pass, store, &y)?;
        let y = self.prelu2.forward(pass, store, &y)?;
        let y = self.norm2.forward(pass, store, &y)?;
        self.pw_out.forward(pass, store, &y)
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv1d> {
        vec![&mut self.pw_in, &mut self.dw, &mut self.pw_out]
    }
}

/// Group communication followed by the shared TCN, residual around the TCN.
#[derive(Clone, Debug)]
pub struct GcTcnBlock {
    pub tac: TacModule,
    pub tcn: TcnModule,
    pub channels: usize,
    pub groups: usize,
}

impl GcTcnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        groups: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::invalid(
                "gc_tcn",
                format!("channels {channels} not divisible by groups {groups}"),
            ));
        }
        let width = channels / groups;
        Ok(GcTcnBlock {
            tac: TacModule::init(store, rng, &format!("{name}.tac"), groups, width),
            tcn: TcnModule::init(store, rng, &format!("{name}.tcn"), width, kernel, dilation, causal),
            channels,
            groups,
        })
    }

    /// Shape-preserving: `[B, C, T] -> [B, C, T]`.
    pub fn forward(&self, pass: &Pass, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(Error::invalid(
                "gc_tcn",
                format!("expected [B, {}, T], got {shape:?}", self.channels),
            ));
        }
        let (b, t) = (shape[0], shape[2]);
        let width = self.channels / self.groups;
        let grouped = x.reshape(&[b * self.groups, width, t])?;
        let exchanged = self.tac.forward(pass, store, &grouped, b)?;
        let processed = exchanged.add(&self.tcn.forward(pass, store, &exchanged)?)?;
        processed.reshape(&[b, self.channels, t])
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv1d> {
        let mut v = self.tac.convs_mut();
        v.extend(self.tcn.convs_mut());
        v
    }
}

//! Lightweight multi-modal speaker extraction, end to end.
//!
//! The crate contains everything needed to train and evaluate a compact
//! time-domain target-speaker extraction network on synthetic mixtures:
//!
//! * [`tensor`] — dense f64 tensors with reverse-mode autodiff
//! * [`quant`] — soft-to-hard weight quantization and 8-bit activation
//!   quantization for quantization-aware training
//! * [`gctcn`] — group-communication TCN blocks and the context codec
//! * [`model`] — the assembled extraction network
//! * [`metrics`] / [`accounting`] — SI-SDR family metrics, parameter /
//!   MACs / model-size arithmetic
//! * [`synth`] / [`io`] — deterministic synthetic mixtures and file formats
//! * [`train`] — two-stage training (full precision, then QAT), Adam,
//!   schedules, checkpoints

pub mod accounting;
pub mod error;
pub mod gctcn;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod quant;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{NormMode, PadMode, Tape, Tensor};

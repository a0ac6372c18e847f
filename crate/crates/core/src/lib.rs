//! Core algorithms for tatum-level drum transcription.
//!
//! The pipeline: a mel-spectrogram front end ([`dsp`]), a convolutional
//! encoder + tatum-pooling + GRU decoder network ([`crnn`]), symbolic drum
//! score handling on a quarter-beat grid ([`score`]), two pretrained
//! language models over drum scores ([`lm`]), and supervised training with
//! an optional language-model naturalness regularizer ([`train`]). A
//! frame-level comparison system lives in [`baseline`], metrics in [`eval`],
//! and a deterministic synthetic corpus generator in [`synth`].
//!
//! Everything here is pure computation over in-memory buffers; file formats,
//! WAV decoding, and the command-line surface live in the companion
//! `tatumscribe` crate. The crate is `no_std` + `alloc` so the numeric core
//! stays free of platform dependencies.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baseline;
pub mod checkpoint;
pub mod crnn;
pub mod dsp;
pub mod eval;
pub mod lm;
mod math;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod score;
pub mod synth;
pub mod tape;
pub mod tensor;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;

pub use crnn::{FrameCrnn, Mode, OnsetProbabilities, Transcriber, TranscriberConfig};
pub use score::{DrumScore, Instrument, OnsetAnnotation, TatumGrid, NUM_INSTRUMENTS};
pub use tensor::{ParamSet, Tensor, TensorError};

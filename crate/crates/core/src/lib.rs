//! Compression toolkit and shift-only inference engine for small 1D CNN
//! ECG rhythm classifiers.
//!
//! The pipeline runs in stages that each live in their own module:
//!
//! | stage | module |
//! |-------|--------|
//! | record ingestion, synthetic data | [`signal_io`] |
//! | standardization, fixed length, splits | [`preprocess`] |
//! | tensors, layers, gradients, SGD | [`nn_core`] |
//! | declarative CNN architecture | [`afib_model`] |
//! | training loop, grid search | [`train`] |
//! | magnitude and filter pruning | [`prune`] |
//! | power-of-two log quantization | [`quantize`] |
//! | `SQNZ` container format | [`packfmt`] |
//! | integer shift-and-add inference | [`shift_infer`] |
//! | confusion matrix and scores | [`metrics`] |
//!
//! Runnable walkthroughs of every stage are in the crate's `examples/`
//! directory; the `sqnz` binary wraps the same calls for batch use.

pub mod afib_model;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod nn_core;
pub mod packfmt;
pub mod preprocess;
pub mod prune;
pub mod quantize;
pub mod rng;
pub mod shift_infer;
pub mod signal_io;
pub mod train;

pub use afib_model::{build_model, ArchConfig, ConvLayerConfig, DenseLayerConfig, Model};
pub use error::{Error, Result};
pub use signal_io::{Dataset, Label, LabeledSignal};

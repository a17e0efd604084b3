//! Lightweight wavelet-domain forecasters.
//!
//! A one-level discrete wavelet transform splits each normalized lookback
//! window into approximation and detail bands; small per-band heads forecast
//! the horizon and the normalization is undone on the way out. Everything runs
//! in `f64` on a small reverse-mode tape, with deterministic seeded training.

pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod gradcheck;
pub mod model;
pub mod moe;
pub mod revin;
pub mod run;
pub mod train;
pub mod wavelet;

pub use data::{Series, SplitScheme, SplitSpec, SynthKind, WindowBatch, Windows};
pub use error::{Error, Result};
pub use eval::{count_macs, count_params, MacCount, Metrics, ParamCount, RunReport};
pub use grad::{AdamConfig, ParamStore, Tape};
pub use model::{DeltaMode, Model, ModelConfig, Variant};
pub use moe::{GateReport, MoEConfig};
pub use revin::RevinState;
pub use run::RunConfig;
pub use train::TrainConfig;
pub use wavelet::{BandPair, FilterBank, WaveletKind};

//! Multi-view prototype-based co-training for noisy time series.
//!
//! Two encoders embed each series, one from the raw signal and one from its
//! magnitude spectrum. They are trained with per-view instance contrast
//! (dropout augmentation) and, after a warm-up, with a co-training loss
//! that pulls each view's embedding towards prototypes computed from the
//! other view's cluster assignments.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod prototypes;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

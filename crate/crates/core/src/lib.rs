//! Continual-learning mechanism laboratory.
//!
//! - [`numerics`]: diagonal-Gaussian KL algebra, posterior constructions,
//!   PAC-Bayes complexity term.
//! - [`gas`]: gradient-adaptive weight noise and quadratic-landscape analysis.
//! - [`pas`]: prototype-anchored pseudo-label validation and the losses built on it.
//! - [`dynamics`]: teacher/student pseudo-label error recurrences, dual-criteria
//!   precision, memory-bank error accumulation, Monte-Carlo validation.
//! - [`bench`]: a deterministic synthetic continual segmentation benchmark that
//!   trains a per-pixel classifier with both mechanisms.
//! - [`cli`]: the `jascl` command-line driver.

pub mod bench;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod gas;
pub mod numerics;
pub mod pas;
pub(crate) mod rows;
pub mod seed;
pub mod theory;

pub use error::{Error, Result};

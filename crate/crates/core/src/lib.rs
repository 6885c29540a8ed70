//! Desk-scale engine for windowed attention-logit decay and its analysis.
//!
//! The pieces fit together like this: [`rope`] builds multimodal rotary
//! frequency series and exposes the closed-form logit expansion;
//! [`spectrum`] estimates the statistical row-attention decomposition from
//! query/key samples and classifies frequency sets as harmonic or not;
//! [`decay`] evaluates the position-dependent factor that suppresses
//! out-of-window attention; [`attention`] is the exact, map-materializing
//! reference; [`tiled`] is the memory-bounded online-softmax equivalent;
//! [`repetition`] scores frame repetition and proves the periodic-output
//! derivation numerically; [`synth`] plants known spectral structure so all
//! of the above is testable without trained weights.

pub mod attention;
pub mod decay;
pub mod error;
pub mod num;
pub mod repetition;
pub mod rope;
pub mod spectrum;
pub mod synth;
pub mod tensorio;
pub mod tiled;

pub use error::{Error, Result};

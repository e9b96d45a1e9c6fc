//! Solving linear inverse problems by conditional sampling from score-based
//! diffusion models.
//!
//! A measurement operator is written as `A = P(mask) T` with an invertible
//! transform `T` (DCT, DFT, dense matrix; Radon with an approximate inverse)
//! and a subsampling mask. Any iterative score-based sampler is turned into
//! an inverse-problem solver by a closed-form proximal step that pulls the
//! observed coefficients toward a diffused copy of the measurement before
//! every predictor and corrector update.

pub mod consistency;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod measurement;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod selftest;
pub mod sde;

pub use error::{Error, Result};

//! Time- and frequency-selective data unlearning for small denoising
//! diffusion models.
//!
//! The crate trains ε-prediction MLP denoisers, removes individual training
//! samples with gradient-ascent, EraseDiff, SISS and preference objectives,
//! optionally restricted to a window of diffusion timesteps and to low spatial
//! frequencies, and measures the outcome.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod selective;

pub use error::{Error, Result};

/// Seedable generator used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

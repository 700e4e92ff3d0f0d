//! Evaluation metrics: embedding similarity scores, radial power spectra,
//! gradient-norm diagnostics and toy coverage measures. Everything here is a
//! pure function of its inputs and the supplied RNG.

mod coverage;
mod embedding;
mod gradnorm;
mod psd;
mod sscd;
mod trajectory;

pub use coverage::{forget_hit_rate, retain_coverage};
pub use embedding::{cosine, Embedding, FlattenCosine, PatchHistogram};
pub use gradnorm::{
    freq_decomposed_grad_norm, grad_norm_at, grad_norm_curve, grad_norm_of, split_frequencies,
    FreqGradNorm,
};
pub use psd::{psd_radial, psd_radial_mean, psd_radial_slice, PsdCurve};
pub use sscd::{sscd_norm, sscd_norm_perturbed, sscd_plain, Denominator, SscdNormConfig};
pub use trajectory::{similarity_trajectory, TrajectoryPoint};

//! Time selection and frequency selection.
//!
//! Unlearning updates are concentrated on a window of diffusion timesteps via
//! [`TimeWindowConfig`] and restricted to low spatial frequencies via a radial
//! FFT mask ([`FrequencyFilterConfig`]). [`selective_wrap`] composes both
//! around any [`crate::objectives::Objective`].

mod filter;
mod spectrum;
mod time_window;
mod wrap;

pub use filter::{
    low_pass, low_pass_rows, low_pass_slice, normalized_radius, radial_mask, FrequencyFilterConfig,
};
pub use spectrum::{dft2, dft2_slice, idft2, idft2_complex, ImageShape, Spectrum};
pub use time_window::{sample_timestep, TimeWindowConfig};
pub use wrap::{selective_wrap, FilterRoute, FrequencySelection, Selection, Selective, TargetMode};

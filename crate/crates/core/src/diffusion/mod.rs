//! Noise schedules, DDPM noising and sampling, and the ε-matching loss.

pub mod checkpoint;
mod denoiser;
mod process;
mod schedule;
mod train;

pub use denoiser::{timestep_embedding, Activation, Arch, Denoiser, EpsModel};
pub use process::{
    denoise_from, epsilon_loss, forward_noise, forward_noise_rows, per_sample_sq_error,
    reverse_step, sample, weighted_sq_error,
};
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use train::train_step;

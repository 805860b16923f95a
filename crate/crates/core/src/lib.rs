//! Mean-reverting SDE diffusion for single-image super-resolution.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedule`] builds the discrete noise schedule (λ, cumulative λ, variances).
//! * [`sde`] holds the SDE mathematics: closed-form marginals, Euler–Maruyama
//!   steps, conditional scores and the one-step posterior mean.
//! * [`nn`] is a small reverse-mode autodiff engine over NCHW tensors.
//! * [`cpem`] and [`eanet`] are the conditioning branch and the U-shaped
//!   noise predictor; [`model`] glues them into one denoiser.
//! * [`train`] and [`sampling`] implement maximum-likelihood training and
//!   reverse-SDE super-resolution.
//! * [`toolkit`] has image I/O, bicubic resizing, metrics, synthetic data and
//!   the configuration file format.
//! * [`pipeline`] wires these into the file-level train, sample and eval workflows.

pub mod cpem;
pub mod eanet;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod nn;
pub mod sampling;
pub mod schedule;
pub mod sde;
pub mod selfcheck;
pub mod toolkit;
pub mod train;

pub use error::{Error, Result};
pub use nn::{Float, Tensor};
pub use schedule::{NoiseSchedule, ScheduleShape};

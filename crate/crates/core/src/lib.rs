//! Ring-artifact simulation and removal for micro-CT slices.
//!
//! * [`synth`] builds ringed/clean training pairs from parametric masks.
//! * [`polar`] and [`filters`] implement the classical route: resample to
//!   polar coordinates, suppress the vertical stripes, resample back.
//! * [`nn`] and [`train`] implement the learned route: an encoder-decoder
//!   network with skip connections, hand-written backward passes and Adam.
//! * [`metrics`] scores either route with SSIM and MSE.

pub mod error;
pub mod filters;
pub mod image;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod polar;
pub mod prng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{Image, Tensor};
pub use prng::Prng;

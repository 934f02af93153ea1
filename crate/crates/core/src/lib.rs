//! Blind single-image super-resolution by alternating kernel estimation and
//! image restoration.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: planar floating-point rasters, file I/O, luma conversion and
//!   bicubic resampling.
//! - [`degradation`]: the blur / decimate / noise degradation model and the
//!   blur-kernel generators used for training and evaluation.
//! - [`kernel_space`]: PCA reduction of blur kernels.
//! - [`engine`]: the unfolded alternating loop over pluggable estimator and
//!   restorer contracts.
//! - [`classical`]: least-squares kernel estimation and conjugate-gradient
//!   restoration, the learning-free instantiation of both contracts.
//! - [`metrics`] and [`bench`]: Y-channel PSNR/SSIM, reduced-space kernel
//!   error, the Gaussian8 test kernels and the batch benchmark runner.
//! - [`synthetic`]: procedural test scenes.

pub mod bench;
pub mod classical;
pub mod degradation;
pub mod engine;
mod error;
pub mod image;
pub mod kernel_space;
pub mod metrics;
pub mod rng;
pub mod synthetic;

pub use crate::error::{Error, Result};
pub use crate::image::Image;

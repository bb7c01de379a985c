//! Cell segmentation and unbiased disector counting on extended depth of
//! field images, with an iterative human-in-the-loop training loop.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the precision used by the pipeline and the command line.

pub mod asa;
pub mod augment;
pub mod disector;
pub mod edf;
pub mod error;
pub mod raster;
pub mod reference;
pub mod review_loop;
pub mod scalar;
pub mod segnet;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double precision image used at file boundaries and by segmentation.
pub type Image = raster::Image<f64>;
pub type ImageStack = raster::ImageStack<f64>;
pub type GmmModel = asa::GmmModel<f64>;

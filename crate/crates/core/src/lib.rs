//! Set-wise no-reference image quality assessment.
//!
//! A set of registered images of one scene is encoded by a convolutional
//! pyramid; at each pyramid stage the images' feature maps are combined into a
//! learned pseudo-reference, every image is compared to it with channel-wise
//! SSIM, and a linear head regresses one quality score per image.

pub mod backbone;
pub mod data;
pub mod error;
pub mod harness;
pub mod head;
pub mod model;
pub mod params;
pub mod pseudo_ref;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};

//! Synthetic registered multi-quality scenes.
//!
//! Each scene is a procedural pristine image plus distorted variants from a
//! small set of families and severity levels. Labels are a full-reference
//! pseudo-MOS computed against the pristine, which never reaches the model.

mod dataset;
mod distort;
mod io;
mod scene;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dataset::{
    aligned_augment, build_dataset, build_scene, center_crop, sample_set_batch, split_scenes, stack_images, Augment, Dataset,
    DatasetConfig, Scene,
    SetBatch, SetSample,
};
pub use distort::{distort, gaussian_blur, label_score, LEVELS};
pub use io::{export_dataset, import_dataset, MANIFEST_HEADER};
pub use scene::{generate_scene, SceneSpec};

/// Image planes `[3, H, W]` with values in `[0, 1]`.
pub type Image = Tensor<f32>;

/// Pixel values are snapped to this grid so 16-bit PNG storage is lossless.
pub const PIXEL_LEVELS: u32 = 65535;

pub(crate) fn snap(v: f32) -> f32 {
    let k = (v.clamp(0.0, 1.0) * PIXEL_LEVELS as f32).round() as u32;
    k as f32 / PIXEL_LEVELS as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GaussianBlur,
    AdditiveGaussianNoise,
    ContrastCompression,
    IntensityQuantization,
}

impl Family {
    pub const ALL: [Family; 4] =
        [Self::GaussianBlur, Self::AdditiveGaussianNoise, Self::ContrastCompression, Self::IntensityQuantization];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianBlur => "gaussian_blur",
            Self::AdditiveGaussianNoise => "additive_gaussian_noise",
            Self::ContrastCompression => "contrast_compression",
            Self::IntensityQuantization => "intensity_quantization",
        }
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&f| f == self).unwrap() as u64
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown distortion family {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub family: Family,
    /// Severity 1 (mildest) to 5.
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Image,
    pub scene_id: u32,
    pub distortion: DistortionSpec,
    pub score: f64,
}

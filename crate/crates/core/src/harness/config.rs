//! Experiment configuration and its flat `key = value` text form.
//!
//! Keys are the [`RunConfig`] field names, nested fields joined with a dot
//! (`lr_decay.factor`, `dataset.scenes`). Lists are comma separated. Blank
//! lines and `#` comments are ignored; unknown or repeated keys are errors.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::{DatasetConfig, Family};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Toggles};
use crate::pseudo_ref::PrVariant;
use crate::tensor::SsimConstants;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: PrVariant,
    pub toggles: Toggles,
    /// Set size during training.
    pub n_train: usize,
    pub epochs: usize,
    pub batch_sets: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_decay: LrDecay,
    /// L2 penalty added to every gradient; 0 disables it.
    pub weight_decay: f64,
    pub huber_delta: f64,
    /// One training run per seed; the seed drives initialization and sampling.
    pub seeds: Vec<u64>,
    pub t_values: Vec<usize>,
    pub dataset: DatasetConfig,
    /// `backbone.seed` is replaced by the run seed.
    pub backbone: BackboneConfig,
    pub ssim_constants: SsimConstants,
    /// Training crop and evaluation center-crop size.
    pub crop: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub partition_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: PrVariant::default(),
            toggles: Toggles::default(),
            n_train: 5,
            epochs: 60,
            batch_sets: 6,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: LrDecay { factor: 0.3, every_epochs: 10 },
            weight_decay: 0.0,
            huber_delta: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            t_values: vec![2, 5, 10, 20, 50, 100],
            dataset: DatasetConfig::default(),
            backbone: BackboneConfig::default(),
            ssim_constants: SsimConstants::default(),
            crop: 64,
            train_fraction: 0.8,
            split_seed: 0,
            partition_seed: 0,
        }
    }
}

fn parse_scalar<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let v = v.trim().trim_start_matches('[').trim_end_matches(']');
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| parse_scalar(key, item.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Batch image count: `batch_sets * n_train`.
    pub fn batch_images(&self) -> usize {
        self.batch_sets * self.n_train
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig { seed, ..self.backbone.clone() },
            variant: self.variant,
            toggles: self.toggles,
            ssim: self.ssim_constants,
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.factor.powi((epoch / self.lr_decay.every_epochs) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_train == 0 || self.batch_sets == 0 || self.epochs == 0 {
            return bad("n_train, batch_sets and epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor <= 1.0) || self.lr_decay.every_epochs == 0 {
            return bad(format!("invalid lr_decay {:?}", self.lr_decay));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return bad(format!("huber_delta must be positive, got {}", self.huber_delta));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.t_values.is_empty() || self.t_values.contains(&0) {
            return bad(format!("t_values must be non-empty and positive, got {:?}", self.t_values));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        self.dataset.validate()?;
        if self.n_train > self.dataset.images_per_scene() {
            return bad(format!(
                "n_train {} exceeds the {} images per scene",
                self.n_train,
                self.dataset.images_per_scene()
            ));
        }
        if self.crop > self.dataset.image_size {
            return bad(format!("crop {} exceeds image_size {}", self.crop, self.dataset.image_size));
        }
        SsimConstants::new(self.ssim_constants.c1, self.ssim_constants.c2)?;
        let taps = self.backbone.tap_shapes(self.crop, self.crop)?;
        if self.toggles.pseudo_ref && self.toggles.ssim {
            for s in self.model_config(0).used_stages() {
                let (_, h, w) = taps[s];
                if h * w < 2 {
                    return bad(format!("crop {} leaves stage {s} at {h}x{w}, too small for SSIM", self.crop));
                }
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "variant" => self.variant = v.parse()?,
            "toggles.pseudo_ref" => self.toggles.pseudo_ref = parse_scalar(key, v)?,
            "toggles.ssim" => self.toggles.ssim = parse_scalar(key, v)?,
            "toggles.pyramid" => self.toggles.pyramid = parse_scalar(key, v)?,
            "n_train" => self.n_train = parse_scalar(key, v)?,
            "epochs" => self.epochs = parse_scalar(key, v)?,
            "batch_sets" => self.batch_sets = parse_scalar(key, v)?,
            "learning_rate" => self.learning_rate = parse_scalar(key, v)?,
            "momentum" => self.momentum = parse_scalar(key, v)?,
            "lr_decay.factor" => self.lr_decay.factor = parse_scalar(key, v)?,
            "lr_decay.every_epochs" => self.lr_decay.every_epochs = parse_scalar(key, v)?,
            "weight_decay" => self.weight_decay = parse_scalar(key, v)?,
            "huber_delta" => self.huber_delta = parse_scalar(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "t_values" => self.t_values = parse_list(key, v)?,
            "dataset.scenes" => self.dataset.scenes = parse_scalar(key, v)?,
            "dataset.families" => {
                self.dataset.families = v.split(',').map(|f| f.parse::<Family>()).collect::<Result<_>>()?
            }
            "dataset.levels" => self.dataset.levels = parse_list(key, v)?,
            "dataset.seed" => self.dataset.seed = parse_scalar(key, v)?,
            "dataset.image_size" => self.dataset.image_size = parse_scalar(key, v)?,
            "backbone.stem_kernel" => self.backbone.stem_kernel = parse_scalar(key, v)?,
            "backbone.stage_channels" => self.backbone.stage_channels = parse_list(key, v)?,
            "backbone.stage_blocks" => self.backbone.stage_blocks = parse_list(key, v)?,
            "backbone.downsample_strides" => self.backbone.downsample_strides = parse_list(key, v)?,
            "ssim_constants.c1" => self.ssim_constants.c1 = parse_scalar(key, v)?,
            "ssim_constants.c2" => self.ssim_constants.c2 = parse_scalar(key, v)?,
            "crop" => self.crop = parse_scalar(key, v)?,
            "train_fraction" => self.train_fraction = parse_scalar(key, v)?,
            "split_seed" => self.split_seed = parse_scalar(key, v)?,
            "partition_seed" => self.partition_seed = parse_scalar(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.name().to_string()),
            ("toggles.pseudo_ref", self.toggles.pseudo_ref.to_string()),
            ("toggles.ssim", self.toggles.ssim.to_string()),
            ("toggles.pyramid", self.toggles.pyramid.to_string()),
            ("n_train", self.n_train.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_sets", self.batch_sets.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("lr_decay.factor", self.lr_decay.factor.to_string()),
            ("lr_decay.every_epochs", self.lr_decay.every_epochs.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("huber_delta", self.huber_delta.to_string()),
            ("seeds", join(&self.seeds)),
            ("t_values", join(&self.t_values)),
            ("dataset.scenes", self.dataset.scenes.to_string()),
            ("dataset.families", join(&self.dataset.families)),
            ("dataset.levels", join(&self.dataset.levels)),
            ("dataset.seed", self.dataset.seed.to_string()),
            ("dataset.image_size", self.dataset.image_size.to_string()),
            ("backbone.stem_kernel", self.backbone.stem_kernel.to_string()),
            ("backbone.stage_channels", join(&self.backbone.stage_channels)),
            ("backbone.stage_blocks", join(&self.backbone.stage_blocks)),
            ("backbone.downsample_strides", join(&self.backbone.downsample_strides)),
            ("ssim_constants.c1", self.ssim_constants.c1.to_string()),
            ("ssim_constants.c2", self.ssim_constants.c2.to_string()),
            ("crop", self.crop.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("partition_seed", self.partition_seed.to_string()),
        ]
    }

    /// Applies `key = value` lines on top of the defaults, then validates.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key = value` lines on top of `self` without validating.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            self.set(key, value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.batch_images(), 30);
    }

    #[test]
    fn kv_round_trip() {
        let mut c = RunConfig::default();
        c.variant = PrVariant::FullWeight;
        c.toggles.pyramid = false;
        c.seeds = vec![7, 8];
        c.learning_rate = 0.0123;
        c.dataset.families = vec![Family::GaussianBlur, Family::IntensityQuantization];
        assert_eq!(RunConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::from_kv("epochs = 3\nlearning_rat = 0.1").is_err());
        assert!(RunConfig::from_kv("epochs = 3\nepochs = 4").is_err());
        assert!(RunConfig::from_kv("epochs 3").is_err());
        assert!(RunConfig::from_kv("n_train = 0").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::from_kv("# header\n\nepochs = 3 # short\nseeds = [1, 2]\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.seeds, vec![1, 2]);
    }

    #[test]
    fn lr_schedule() {
        let c = RunConfig::default();
        assert_eq!(c.lr_at(9), c.learning_rate);
        assert!((c.lr_at(10) - c.learning_rate * 0.3).abs() < 1e-15);
        assert!((c.lr_at(25) - c.learning_rate * 0.09).abs() < 1e-15);
    }
}

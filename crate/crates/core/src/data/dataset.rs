use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distort, generate_scene, label_score, DistortionSpec, Family, Image, LabeledImage, SceneSpec, LEVELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub families: Vec<Family>,
    pub levels: Vec<u8>,
    pub seed: u64,
    pub image_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { scenes: 40, families: Family::ALL.to_vec(), levels: LEVELS.to_vec(), seed: 0, image_size: 80 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes < 2 {
            return Err(Error::Config(format!("dataset needs at least 2 scenes, got {}", self.scenes)));
        }
        if self.families.is_empty() || self.levels.is_empty() {
            return Err(Error::Config("dataset needs at least one family and one level".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| !LEVELS.contains(l)) {
            return Err(Error::Config(format!("distortion level {l} outside 1..=5")));
        }
        Ok(())
    }

    pub fn images_per_scene(&self) -> usize {
        self.families.len() * self.levels.len()
    }
}

/// One content: the pristine (kept for labelling and inspection only) and
/// its labelled distorted variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: u32,
    pub pristine: Image,
    pub images: Vec<LabeledImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn image_count(&self) -> usize {
        self.scenes.iter().map(|s| s.images.len()).sum()
    }

    pub fn scene_ids(&self) -> Vec<u32> {
        self.scenes.iter().map(|s| s.scene_id).collect()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scenes.iter().flat_map(|s| s.images.iter().map(|i| i.score))
    }

    /// Keeps the scenes whose id is in `ids`, in dataset order.
    pub fn subset(&self, ids: &[u32]) -> Dataset {
        Dataset {
            config: self.config.clone(),
            scenes: self.scenes.iter().filter(|s| ids.contains(&s.scene_id)).cloned().collect(),
        }
    }

    /// Restricts every scene to its first `n` images.
    pub fn truncate_scenes(&mut self, n: usize) {
        self.scenes.iter_mut().for_each(|s| s.images.truncate(n));
    }
}

fn noise_seed(seed: u64, scene_id: u32) -> u64 {
    seed ^ (u64::from(scene_id) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn build_scene(config: &DatasetConfig, scene_id: u32) -> Result<Scene> {
    let pristine = generate_scene(&SceneSpec { scene_id, seed: config.seed, image_size: config.image_size })?;
    let mut images = Vec::with_capacity(config.images_per_scene());
    for &family in &config.families {
        for &level in &config.levels {
            let distortion = DistortionSpec { family, level };
            let pixels = distort(&pristine, distortion, noise_seed(config.seed, scene_id))?;
            let score = label_score(&pristine, &pixels)?;
            images.push(LabeledImage { pixels, scene_id, distortion, score });
        }
    }
    Ok(Scene { scene_id, pristine, images })
}

/// Generates `config.scenes` scenes with ids `0..scenes`.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let scenes = (0..config.scenes as u32).map(|id| build_scene(config, id)).collect::<Result<_>>()?;
    Ok(Dataset { config: config.clone(), scenes })
}

/// Scene-disjoint split: a seeded shuffle of scene ids, the first
/// `round(train_fraction * D)` going to training.
pub fn split_scenes(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut ids = dataset.scene_ids();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let (train, test) = ids.split_at(n_train);
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// Shared geometric transform of one set: crop offset and horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub dx: usize,
    pub dy: usize,
    pub size: usize,
    pub flip: bool,
}

impl Augment {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let (c, h, w) = dims(img)?;
        if self.size == 0 || self.dy + self.size > h || self.dx + self.size > w {
            return Err(Error::Data(format!(
                "crop {}x{} at ({}, {}) does not fit a {h}x{w} image",
                self.size, self.size, self.dx, self.dy
            )));
        }
        let s = self.size;
        let src = img.data();
        let out = Tensor::from_fn(&[c, s, s], |i| {
            let (ch, y, x) = (i / (s * s), i / s % s, i % s);
            let x = if self.flip { s - 1 - x } else { x };
            src[(ch * h + self.dy + y) * w + self.dx + x]
        });
        Ok(out)
    }
}

fn dims(img: &Image) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Data(format!("expected a [C, H, W] image, got {:?}", img.shape()))),
    }
}

/// Draws one crop offset and one flip for the whole set and applies them to
/// every image.
pub fn aligned_augment<R: Rng>(images: &[Image], crop: usize, rng: &mut R) -> Result<(Vec<Image>, Augment)> {
    let first = images.first().ok_or_else(|| Error::Data("cannot augment an empty set".into()))?;
    let (_, h, w) = dims(first)?;
    if images.iter().any(|i| i.shape() != first.shape()) {
        return Err(Error::Data("images in a set must share one shape".into()));
    }
    if crop == 0 || crop > h || crop > w {
        return Err(Error::Data(format!("crop {crop} larger than the {h}x{w} images")));
    }
    let aug =
        Augment { dx: rng.random_range(0..=w - crop), dy: rng.random_range(0..=h - crop), size: crop, flip: rng.random() };
    let out = images.iter().map(|i| aug.apply(i)).collect::<Result<_>>()?;
    Ok((out, aug))
}

pub fn center_crop(img: &Image, crop: usize) -> Result<Image> {
    let (_, h, w) = dims(img)?;
    if crop == 0 || crop > h || crop > w {
        return Err(Error::Data(format!("crop {crop} larger than the {h}x{w} image")));
    }
    Augment { dx: (w - crop) / 2, dy: (h - crop) / 2, size: crop, flip: false }.apply(img)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetSample {
    pub scene_id: u32,
    /// Indices into the scene's image list.
    pub members: Vec<usize>,
    pub images: Vec<Image>,
    pub targets: Vec<f64>,
    pub augment: Option<Augment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetBatch {
    pub sets: Vec<SetSample>,
}

impl SetBatch {
    pub fn image_count(&self) -> usize {
        self.sets.iter().map(|s| s.images.len()).sum()
    }

    pub fn set_sizes(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s.images.len()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.sets.iter().flat_map(|s| s.targets.iter().copied()).collect()
    }

    /// Applies an independent aligned augmentation to each set.
    pub fn augment<R: Rng>(mut self, crop: usize, rng: &mut R) -> Result<Self> {
        for set in &mut self.sets {
            let (images, aug) = aligned_augment(&set.images, crop, rng)?;
            set.images = images;
            set.augment = Some(aug);
        }
        Ok(self)
    }

    /// All images stacked set after set into `[B*N, C, H, W]`.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        stack_images(self.sets.iter().flat_map(|s| s.images.iter()))
    }
}

pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor<f32>> {
    let images: Vec<&Image> = images.into_iter().collect();
    let first = images.first().ok_or_else(|| Error::Data("cannot stack zero images".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in &images {
        if img.shape() != shape.as_slice() {
            return Err(Error::Data(format!("cannot stack {:?} with {:?}", img.shape(), shape)));
        }
        data.extend_from_slice(img.data());
    }
    let mut full = vec![images.len()];
    full.extend(shape);
    Ok(Tensor::new(full, data)?)
}

/// Draws `b` scenes uniformly with replacement and `n` distinct images from
/// each.
pub fn sample_set_batch<R: Rng>(dataset: &Dataset, b: usize, n: usize, rng: &mut R) -> Result<SetBatch> {
    if dataset.scenes.is_empty() || b == 0 || n == 0 {
        return Err(Error::Config(format!("cannot sample {b} sets of {n} from {} scenes", dataset.scenes.len())));
    }
    let mut sets = Vec::with_capacity(b);
    for _ in 0..b {
        let scene = &dataset.scenes[rng.random_range(0..dataset.scenes.len())];
        if n > scene.images.len() {
            return Err(Error::Config(format!(
                "set size {n} exceeds the {} images of scene {}",
                scene.images.len(),
                scene.scene_id
            )));
        }
        let members = index::sample(rng, scene.images.len(), n).into_vec();
        sets.push(SetSample {
            scene_id: scene.scene_id,
            images: members.iter().map(|&i| scene.images[i].pixels.clone()).collect(),
            targets: members.iter().map(|&i| scene.images[i].score).collect(),
            members,
            augment: None,
        });
    }
    Ok(SetBatch { sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let config = DatasetConfig { scenes: 3, levels: vec![1, 3], image_size: 64, ..Default::default() };
        build_dataset(&config).unwrap()
    }

    #[test]
    fn counts() {
        let ds = small();
        assert_eq!(ds.image_count(), 3 * 4 * 2);
        assert!(build_dataset(&DatasetConfig { scenes: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let ds = small();
        let (train, test) = split_scenes(&ds, 0.67, 4).unwrap();
        assert_eq!(train.scenes.len() + test.scenes.len(), 3);
        assert!(train.scene_ids().iter().all(|id| !test.scene_ids().contains(id)));
    }

    #[test]
    fn sets_are_single_scene_and_distinct() {
        let ds = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let batch = sample_set_batch(&ds, 6, 5, &mut rng).unwrap();
            assert_eq!(batch.image_count(), 30);
            for set in &batch.sets {
                let mut m = set.members.clone();
                m.sort_unstable();
                m.dedup();
                assert_eq!(m.len(), 5);
                let scene = ds.scenes.iter().find(|s| s.scene_id == set.scene_id).unwrap();
                assert!(set.members.iter().all(|&i| scene.images[i].scene_id == set.scene_id));
            }
        }
        assert!(sample_set_batch(&ds, 1, 9, &mut rng).is_err());
    }

    #[test]
    fn augmentation_is_shared() {
        let ds = small();
        let img = ds.scenes[0].images[0].pixels.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (out, aug) = aligned_augment(&[img.clone(), img.clone()], 48, &mut rng).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0].shape(), &[3, 48, 48]);
        assert_eq!(aug.apply(&img).unwrap(), out[0]);
        assert!(aligned_augment(&[img], 65, &mut rng).is_err());
    }

    #[test]
    fn double_flip_is_identity() {
        let img = Tensor::from_fn(&[3, 4, 4], |i| i as f32);
        let flip = Augment { dx: 0, dy: 0, size: 4, flip: true };
        assert_eq!(flip.apply(&flip.apply(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn center_crop_offsets() {
        let img = Tensor::from_fn(&[1, 5, 5], |i| i as f32);
        let c = center_crop(&img, 3).unwrap();
        assert_eq!(c.data()[0], 6.0);
    }
}

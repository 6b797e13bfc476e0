use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// One test image: its scene and its index within that scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub scene_id: u32,
    pub index: usize,
}

/// Test images grouped into single-scene sets of size `t` (plus at most one
/// smaller remainder set per scene).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub t: usize,
    pub seed: u64,
    pub sets: Vec<Vec<ImageRef>>,
}

impl Partition {
    pub fn set_sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Every image of `dataset` appears in exactly one set, and nothing else does.
    pub fn check_total(&self, dataset: &Dataset) -> Result<()> {
        let mut seen: Vec<ImageRef> = self.sets.iter().flatten().copied().collect();
        seen.sort_unstable();
        let mut expected: Vec<ImageRef> = dataset
            .scenes
            .iter()
            .flat_map(|s| (0..s.images.len()).map(move |index| ImageRef { scene_id: s.scene_id, index }))
            .collect();
        expected.sort_unstable();
        if seen != expected {
            return Err(Error::Data(format!(
                "partition covers {} image slots but the test set has {} images",
                seen.len(),
                expected.len()
            )));
        }
        if self.sets.iter().any(|set| set.iter().any(|r| r.scene_id != set[0].scene_id)) {
            return Err(Error::Data("partition set mixes scenes".into()));
        }
        Ok(())
    }
}

/// Shuffles each scene's images with its own stream of `seed` and chunks them
/// into sets of `t`; the remainder becomes a final smaller set.
pub fn partition_test(dataset: &Dataset, t: usize, seed: u64) -> Result<Partition> {
    if t == 0 {
        return Err(Error::Config("set size T must be at least 1".into()));
    }
    if dataset.image_count() == 0 {
        return Err(Error::Data("cannot partition an empty test set".into()));
    }
    let mut sets = Vec::new();
    for scene in &dataset.scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(scene.scene_id));
        let mut order: Vec<usize> = (0..scene.images.len()).collect();
        order.shuffle(&mut rng);
        sets.extend(
            order.chunks(t).map(|c| c.iter().map(|&index| ImageRef { scene_id: scene.scene_id, index }).collect()),
        );
    }
    Ok(Partition { t, seed, sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetConfig, Scene};
    use crate::tensor::Tensor;

    /// A dataset of `scenes` scenes with `per_scene` dummy images each.
    fn dummy(scenes: u32, per_scene: usize) -> Dataset {
        use crate::data::{DistortionSpec, Family, LabeledImage};
        let img = Tensor::zeros(&[3, 1, 1]);
        Dataset {
            config: DatasetConfig::default(),
            scenes: (0..scenes)
                .map(|scene_id| Scene {
                    scene_id,
                    pristine: img.clone(),
                    images: (0..per_scene)
                        .map(|i| LabeledImage {
                            pixels: img.clone(),
                            scene_id,
                            distortion: DistortionSpec { family: Family::GaussianBlur, level: 1 },
                            score: i as f64,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn set_sizes_follow_remainder_rule() {
        let ds = dummy(1, 20);
        assert_eq!(partition_test(&ds, 5, 0).unwrap().set_sizes(), vec![5; 4]);
        assert_eq!(partition_test(&ds, 7, 0).unwrap().set_sizes(), vec![7, 7, 6]);
        assert_eq!(partition_test(&ds, 1, 0).unwrap().set_sizes(), vec![1; 20]);
    }

    #[test]
    fn total_and_single_scene() {
        let ds = dummy(3, 20);
        for t in [2, 5, 10, 20, 50, 100] {
            let p = partition_test(&ds, t, 9).unwrap();
            p.check_total(&ds).unwrap();
        }
    }

    #[test]
    fn seeded() {
        let ds = dummy(2, 20);
        assert_eq!(partition_test(&ds, 5, 3).unwrap(), partition_test(&ds, 5, 3).unwrap());
        assert_ne!(partition_test(&ds, 5, 3).unwrap(), partition_test(&ds, 5, 4).unwrap());
    }

    #[test]
    fn errors() {
        assert!(partition_test(&dummy(1, 4), 0, 0).is_err());
        assert!(partition_test(&dummy(1, 0), 2, 0).is_err());
    }
}

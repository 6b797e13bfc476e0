use super::metrics::{pearson, spearman};
use super::partition::{partition_test, Partition};
use crate::data::{center_crop, stack_images, Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::model::PriqModel;

/// Anything that scores a set of registered images jointly.
pub trait SetScorer {
    /// One score per image of `set`, in order.
    fn score_set(&self, set: &[&LabeledImage]) -> Result<Vec<f64>>;

    /// Scores several sets; the default scores them one at a time.
    fn score_sets(&self, sets: &[Vec<&LabeledImage>]) -> Result<Vec<Vec<f64>>> {
        sets.iter().map(|s| self.score_set(s)).collect()
    }
}

impl<F> SetScorer for F
where
    F: Fn(&[&LabeledImage]) -> Result<Vec<f64>>,
{
    fn score_set(&self, set: &[&LabeledImage]) -> Result<Vec<f64>> {
        self(set)
    }
}

/// A model paired with its evaluation preprocessing (deterministic center
/// crop, no flip).
pub struct CroppedModel<'a> {
    pub model: &'a PriqModel<f32>,
    pub crop: usize,
}

/// Images per forward pass when batching several sets together.
const EVAL_BATCH_IMAGES: usize = 64;

impl SetScorer for CroppedModel<'_> {
    fn score_set(&self, set: &[&LabeledImage]) -> Result<Vec<f64>> {
        Ok(self.score_sets(&[set.to_vec()])?.remove(0))
    }

    fn score_sets(&self, sets: &[Vec<&LabeledImage>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(sets.len());
        let mut start = 0;
        while start < sets.len() {
            let mut end = start;
            let mut count = 0;
            while end < sets.len() && (end == start || count + sets[end].len() <= EVAL_BATCH_IMAGES) {
                count += sets[end].len();
                end += 1;
            }
            let chunk = &sets[start..end];
            let crops = chunk.iter().flatten().map(|img| center_crop(&img.pixels, self.crop)).collect::<Result<Vec<_>>>()?;
            let sizes: Vec<usize> = chunk.iter().map(Vec::len).collect();
            let scores = self.model.score(&stack_images(&crops)?, &sizes)?;
            let mut it = scores.into_iter().map(f64::from);
            out.extend(sizes.iter().map(|&n| it.by_ref().take(n).collect()));
            start = end;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub lcc: f64,
    pub srocc: f64,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

/// Scores every set of `partition` and computes LCC and SROCC once over the
/// pooled predictions of the whole test set.
pub fn evaluate_partition(scorer: &impl SetScorer, test: &Dataset, partition: &Partition) -> Result<Evaluation> {
    partition.check_total(test)?;
    let sets: Vec<Vec<&LabeledImage>> = partition
        .sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|r| {
                    test.scenes
                        .iter()
                        .find(|s| s.scene_id == r.scene_id)
                        .and_then(|s| s.images.get(r.index))
                        .ok_or_else(|| Error::Data(format!("partition refers to missing image {r:?}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let scores = scorer.score_sets(&sets)?;
    let mut predictions = Vec::with_capacity(test.image_count());
    let mut labels = Vec::with_capacity(test.image_count());
    for (set, s) in sets.iter().zip(scores) {
        if s.len() != set.len() {
            return Err(Error::Data(format!("scorer returned {} scores for a set of {}", s.len(), set.len())));
        }
        predictions.extend(s);
        labels.extend(set.iter().map(|img| img.score));
    }
    Ok(Evaluation { lcc: pearson(&predictions, &labels)?, srocc: spearman(&predictions, &labels)?, predictions, labels })
}

pub fn evaluate(scorer: &impl SetScorer, test: &Dataset, t: usize, seed: u64) -> Result<Evaluation> {
    evaluate_partition(scorer, test, &partition_test(test, t, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, DatasetConfig};

    fn test_set() -> Dataset {
        build_dataset(&DatasetConfig { scenes: 2, levels: vec![1, 3, 5], image_size: 64, ..Default::default() }).unwrap()
    }

    #[test]
    fn perfect_stub() {
        let oracle = |set: &[&LabeledImage]| Ok(set.iter().map(|i| i.score).collect());
        let ev = evaluate(&oracle, &test_set(), 5, 0).unwrap();
        assert_eq!((ev.lcc, ev.srocc), (1.0, 1.0));
    }

    #[test]
    fn constant_stub_is_undefined() {
        let flat = |set: &[&LabeledImage]| Ok(vec![0.5; set.len()]);
        assert!(matches!(evaluate(&flat, &test_set(), 5, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn batched_model_scores_match_single_sets() {
        let ds = test_set();
        let model = PriqModel::build(&Default::default()).unwrap();
        let scorer = CroppedModel { model: &model, crop: 64 };
        let p = partition_test(&ds, 5, 1).unwrap();
        let sets: Vec<Vec<&LabeledImage>> = p
            .sets
            .iter()
            .map(|s| s.iter().map(|r| &ds.scenes.iter().find(|x| x.scene_id == r.scene_id).unwrap().images[r.index]).collect())
            .collect();
        let batched = scorer.score_sets(&sets).unwrap();
        for (set, b) in sets.iter().zip(&batched) {
            let single = scorer.score_set(set).unwrap();
            for (x, y) in single.iter().zip(b) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }
}

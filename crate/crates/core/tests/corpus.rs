use std::sync::OnceLock;

use priq::data::{
    aligned_augment, build_dataset, generate_scene, label_score, sample_set_batch, split_scenes, Augment, Dataset,
    DatasetConfig, Family, SceneSpec,
};
use priq::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus() -> &'static Dataset {
    static CORPUS: OnceLock<Dataset> = OnceLock::new();
    CORPUS.get_or_init(|| build_dataset(&DatasetConfig::default()).unwrap())
}

fn score(ds: &Dataset, scene: usize, family: Family, level: u8) -> f64 {
    ds.scenes[scene]
        .images
        .iter()
        .find(|i| i.distortion.family == family && i.distortion.level == level)
        .unwrap()
        .score
}

#[test]
fn default_corpus_size_and_split() {
    let ds = corpus();
    assert_eq!(ds.image_count(), 800);
    let (train, test) = split_scenes(ds, 0.8, 0).unwrap();
    assert_eq!((train.scenes.len(), test.scenes.len()), (32, 8));
}

#[test]
fn labels_span_the_unit_interval() {
    let scores: Vec<f64> = corpus().scores().collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    assert!(hi - lo >= 0.3, "label span {lo}..{hi}");
}

#[test]
fn labels_fall_with_severity() {
    let ds = corpus();
    let mut monotone = 0;
    let mut pairs = 0;
    for s in 0..ds.scenes.len() {
        for family in Family::ALL {
            pairs += 1;
            let v: Vec<f64> = (1..=5).map(|l| score(ds, s, family, l)).collect();
            monotone += v.windows(2).all(|w| w[1] <= w[0]) as usize;
        }
    }
    assert!(monotone as f64 >= 0.95 * pairs as f64, "{monotone}/{pairs}");

    let median_blur: Vec<f64> = (1..=5)
        .map(|l| {
            let mut v: Vec<f64> = (0..ds.scenes.len()).map(|s| score(ds, s, Family::GaussianBlur, l)).collect();
            v.sort_by(f64::total_cmp);
            (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
        })
        .collect();
    assert!(median_blur.windows(2).all(|w| w[1] < w[0]), "{median_blur:?}");
}

#[test]
fn regeneration_is_bit_identical() {
    let config = DatasetConfig { scenes: 3, ..DatasetConfig::default() };
    let (a, b) = (build_dataset(&config).unwrap(), build_dataset(&config).unwrap());
    for (x, y) in a.scenes.iter().zip(&b.scenes) {
        assert_eq!(x.pristine.data(), y.pristine.data());
        for (i, j) in x.images.iter().zip(&y.images) {
            assert_eq!(i.pixels.data(), j.pixels.data());
            assert_eq!(i.score.to_bits(), j.score.to_bits());
        }
    }
}

#[test]
fn scenes_differ_and_stay_in_range() {
    let spec = |scene_id| SceneSpec { scene_id, seed: 0, image_size: 80 };
    let (a, b) = (generate_scene(&spec(0)).unwrap(), generate_scene(&spec(1)).unwrap());
    let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64;
    assert!(mad > 0.01, "{mad}");
    for img in corpus().scenes.iter().flat_map(|s| s.images.iter()) {
        assert!(img.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn pristine_scores_one_and_inverse_scores_low() {
    let scene = &corpus().scenes[0];
    assert!((label_score(&scene.pristine, &scene.pristine).unwrap() - 1.0).abs() < 1e-12);
    let inverse = Tensor::from_fn(scene.pristine.shape(), |i| 1.0 - scene.pristine.data()[i]);
    assert!(label_score(&scene.pristine, &inverse).unwrap() < 0.5);
}

#[test]
fn sampled_sets_are_single_scene_and_distinct() {
    let ds = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let batch = sample_set_batch(ds, 6, 5, &mut rng).unwrap();
        assert_eq!(batch.image_count(), 30);
        for set in &batch.sets {
            let mut m = set.members.clone();
            m.sort_unstable();
            m.dedup();
            assert_eq!(m.len(), 5);
            let scene = ds.scenes.iter().find(|s| s.scene_id == set.scene_id).unwrap();
            for (k, &i) in set.members.iter().enumerate() {
                assert_eq!(scene.images[i].scene_id, set.scene_id);
                assert_eq!(set.targets[k], scene.images[i].score);
            }
        }
    }
}

#[test]
fn crop_offsets_cover_all_positions() {
    let img = corpus().scenes[0].images[0].pixels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cells = 17 * 17;
    let mut counts = vec![0usize; cells];
    let draws = 10_000;
    for _ in 0..draws {
        let (_, aug) = aligned_augment(std::slice::from_ref(&img), 64, &mut rng).unwrap();
        counts[aug.dy * 17 + aug.dx] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0));
    let expected = draws as f64 / cells as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 288 degrees of freedom: the 0.999 quantile is about 376
    assert!(chi2 < 376.0, "chi-square {chi2}");
}

#[test]
fn augmentation_keeps_sets_registered() {
    let img = corpus().scenes[2].images[3].pixels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (out, _) = aligned_augment(&[img.clone(), img.clone()], 64, &mut rng).unwrap();
        assert_eq!(out[0].data(), out[1].data());
    }
    let flip = Augment { dx: 0, dy: 0, size: 80, flip: true };
    assert_eq!(flip.apply(&flip.apply(&img).unwrap()).unwrap().data(), img.data());
}

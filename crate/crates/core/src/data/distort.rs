use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{snap, DistortionSpec, Family, Image};
use crate::error::{Error, Result};
use crate::tensor::{ssim_plane, SsimConstants, Tensor};

pub const LEVELS: [u8; 5] = [1, 2, 3, 4, 5];

const BLUR_SIGMA: [f32; 5] = [0.5, 1.0, 2.0, 3.0, 4.5];
const NOISE_SIGMA: [f32; 5] = [0.02, 0.05, 0.1, 0.15, 0.25];
const CONTRAST_GAIN: [f32; 5] = [0.8, 0.6, 0.4, 0.25, 0.12];
const QUANT_LEVELS: [u32; 5] = [24, 12, 6, 4, 2];

/// Reflect index into `0..len` (mirror without repeating the edge sample).
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f32 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with reflective borders. `sigma <= 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src = img.data();
    let mut tmp = vec![0f32; src.len()];
    let mut out = vec![0f32; src.len()];
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[plane + y * w + x] =
                    k.iter().enumerate().map(|(i, kv)| kv * src[plane + y * w + reflect(x as isize + i as isize - r, w)]).sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[plane + y * w + x] =
                    k.iter().enumerate().map(|(i, kv)| kv * tmp[plane + reflect(y as isize + i as isize - r, h) * w + x]).sum();
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Adds `sigma`-scaled unit Gaussian noise from `rng` and clips to `[0, 1]`.
pub(crate) fn add_noise(img: &Image, sigma: f32, rng: &mut ChaCha8Rng) -> Image {
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let n: f32 = StandardNormal.sample(rng);
            (v + sigma * n).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

fn compress_contrast(img: &Image, gain: f32) -> Image {
    let plane = img.shape()[1] * img.shape()[2];
    let mut data = img.data().to_vec();
    for ch in data.chunks_mut(plane) {
        let mean = ch.iter().sum::<f32>() / plane as f32;
        ch.iter_mut().for_each(|v| *v = mean + gain * (*v - mean));
    }
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

fn quantize(img: &Image, levels: u32) -> Image {
    let steps = (levels - 1) as f32;
    Tensor::new(img.shape().to_vec(), img.data().iter().map(|&v| (v * steps).round() / steps).collect()).expect("same shape")
}

/// Applies a distortion without geometric change. `noise_seed` drives the
/// noise family only; the same seed gives the same noise field at every
/// level, scaled by that level's sigma.
pub fn distort(pristine: &Image, spec: DistortionSpec, noise_seed: u64) -> Result<Image> {
    if !(1..=5).contains(&spec.level) {
        return Err(Error::Config(format!("distortion level {} outside 1..=5", spec.level)));
    }
    let li = (spec.level - 1) as usize;
    let out = match spec.family {
        Family::GaussianBlur => gaussian_blur(pristine, BLUR_SIGMA[li]),
        Family::AdditiveGaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            rng.set_stream(spec.family.index());
            add_noise(pristine, NOISE_SIGMA[li], &mut rng)
        }
        Family::ContrastCompression => compress_contrast(pristine, CONTRAST_GAIN[li]),
        Family::IntensityQuantization => quantize(pristine, QUANT_LEVELS[li]),
    };
    let data = out.data().iter().map(|&v| snap(v)).collect();
    Ok(Tensor::new(out.shape().to_vec(), data)?)
}

/// Pseudo-MOS: channel-mean global SSIM against the pristine, mapped from
/// `[-1, 1]` to `[0, 1]`.
pub fn label_score(pristine: &Image, distorted: &Image) -> Result<f64> {
    if pristine.shape() != distorted.shape() || pristine.rank() != 3 {
        return Err(Error::Data(format!(
            "label_score needs registered [3, H, W] images, got {:?} and {:?}",
            pristine.shape(),
            distorted.shape()
        )));
    }
    let plane = pristine.shape()[1] * pristine.shape()[2];
    let to64 = |t: &Image| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let (p, d) = (to64(pristine), to64(distorted));
    let channels = pristine.shape()[0];
    let mean = (0..channels)
        .map(|c| ssim_plane(&p[c * plane..(c + 1) * plane], &d[c * plane..(c + 1) * plane], SsimConstants::default()))
        .sum::<f64>()
        / channels as f64;
    Ok((mean + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneSpec};

    fn scene(id: u32) -> Image {
        generate_scene(&SceneSpec { scene_id: id, seed: 3, image_size: 64 }).unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let img = scene(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&img, 0.0, &mut rng), img);
    }

    #[test]
    fn blur_preserves_mean() {
        let img = scene(1);
        for sigma in BLUR_SIGMA {
            let out = gaussian_blur(&img, sigma);
            let m0 = img.data().iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
            let m1 = out.data().iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64;
            assert!((m0 - m1).abs() < 1e-3, "sigma {sigma}: {m0} vs {m1}");
        }
    }

    #[test]
    fn identical_images_score_one() {
        let img = scene(2);
        assert_eq!(label_score(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn anti_correlated_scores_low() {
        let img = scene(3);
        // invert around each channel's mean so luminance matches but structure flips
        let plane = 64 * 64;
        let mut data = img.data().to_vec();
        for ch in data.chunks_mut(plane) {
            let mean = ch.iter().sum::<f32>() / plane as f32;
            ch.iter_mut().for_each(|v| *v = 2.0 * mean - *v);
        }
        let inv = Tensor::new(img.shape().to_vec(), data).unwrap();
        assert!(label_score(&img, &inv).unwrap() < 0.5);
    }

    #[test]
    fn level_bounds() {
        let img = scene(0);
        let bad = DistortionSpec { family: Family::GaussianBlur, level: 0 };
        assert!(distort(&img, bad, 0).is_err());
        let bad = DistortionSpec { family: Family::GaussianBlur, level: 6 };
        assert!(distort(&img, bad, 0).is_err());
        assert!("motion_blur".parse::<Family>().is_err());
    }

    #[test]
    fn registered_shape() {
        let img = scene(4);
        for family in Family::ALL {
            let out = distort(&img, DistortionSpec { family, level: 3 }, 9).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{snap, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_SCENE_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: u32,
    pub seed: u64,
    pub image_size: usize,
}

impl SceneSpec {
    /// Content generator for this scene: stream `scene_id` of the seed.
    pub(crate) fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.scene_id as u64);
        rng
    }
}

enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Stripes { freq: f32, angle: f32, phase: f32 },
}

impl Shape {
    fn covers(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Stripes { .. } => true,
        }
    }
}

/// Procedural pristine image: a colour gradient, band-limited sinusoidal
/// texture at several scales, and hard-edged shapes and gratings.
pub fn generate_scene(spec: &SceneSpec) -> Result<Image> {
    if spec.image_size < MIN_SCENE_SIZE {
        return Err(Error::Config(format!("image_size {} is below the minimum {MIN_SCENE_SIZE}", spec.image_size)));
    }
    let size = spec.image_size;
    let mut rng = spec.rng();

    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let slope: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    let grad_angle = rng.random_range(0.0..TAU);
    let (gx, gy) = (grad_angle.cos(), grad_angle.sin());

    // (amplitude, fx, fy, phase, channel weights)
    let waves: Vec<(f32, f32, f32, f32, [f32; 3])> = (0..10)
        .map(|i| {
            let scale = 2f32.powi(i % 5);
            let freq = rng.random_range(0.5..1.0) * scale / size as f32;
            let angle = rng.random_range(0.0..TAU);
            let amp = rng.random_range(0.03..0.08);
            let mix = std::array::from_fn(|_| rng.random_range(0.4..1.0));
            (amp, freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..TAU), mix)
        })
        .collect();

    let s = size as f32;
    let shapes: Vec<(Shape, [f32; 3])> = (0..rng.random_range(5..10))
        .map(|_| {
            let colour = std::array::from_fn(|_| rng.random_range(0.05..0.95));
            let shape = match rng.random_range(0..3) {
                0 => Shape::Disc { cx: rng.random_range(0.0..s), cy: rng.random_range(0.0..s), r: rng.random_range(0.06..0.25) * s },
                1 => {
                    let (x0, y0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                    let (w, h) = (rng.random_range(0.1..0.4) * s, rng.random_range(0.1..0.4) * s);
                    Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
                }
                _ => Shape::Stripes {
                    freq: rng.random_range(0.15..0.45),
                    angle: rng.random_range(0.0..TAU),
                    phase: rng.random_range(0.0..TAU),
                },
            };
            (shape, colour)
        })
        .collect();
    // gratings are confined to a disc so they do not cover the whole frame
    let grating_zone: Vec<(f32, f32, f32)> =
        shapes.iter().map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.1..0.2) * s)).collect();

    let mut data = vec![0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f32, y as f32);
            let t = ((xf * gx + yf * gy) / s) - 0.5;
            let mut px: [f32; 3] = std::array::from_fn(|c| base[c] + slope[c] * t);
            for &(amp, fx, fy, phase, mix) in &waves {
                let v = amp * (TAU * (fx * xf + fy * yf) + phase).sin();
                for c in 0..3 {
                    px[c] += v * mix[c];
                }
            }
            for ((shape, colour), &(zx, zy, zr)) in shapes.iter().zip(&grating_zone) {
                match *shape {
                    Shape::Stripes { freq, angle, phase } => {
                        if (xf - zx).powi(2) + (yf - zy).powi(2) <= zr * zr {
                            let u = xf * angle.cos() + yf * angle.sin();
                            if (u * freq + phase).sin() > 0.0 {
                                px = *colour;
                            }
                        }
                    }
                    ref other if other.covers(xf, yf) => px = *colour,
                    _ => {}
                }
            }
            for c in 0..3 {
                data[(c * size + y) * size + x] = snap(px[c]);
            }
        }
    }
    Ok(Tensor::new(vec![3, size, size], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SceneSpec { scene_id: 4, seed: 11, image_size: 64 };
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
    }

    #[test]
    fn in_unit_range() {
        let img = generate_scene(&SceneSpec { scene_id: 0, seed: 1, image_size: 80 }).unwrap();
        assert_eq!(img.shape(), &[3, 80, 80]);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn scenes_differ() {
        let a = generate_scene(&SceneSpec { scene_id: 0, seed: 5, image_size: 64 }).unwrap();
        let b = generate_scene(&SceneSpec { scene_id: 1, seed: 5, image_size: 64 }).unwrap();
        let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f32>() / a.len() as f32;
        assert!(mad > 0.01, "{mad}");
    }

    #[test]
    fn too_small() {
        assert!(generate_scene(&SceneSpec { scene_id: 0, seed: 0, image_size: 32 }).is_err());
    }
}

//! Straight-line re-implementation of the full model on top of the naive
//! oracles, reading parameters by name.

use std::collections::HashMap;

use super::oracles;
use crate::backbone::NUM_TAPS;
use crate::model::PriqModel;
use crate::tensor::Tensor;

fn relu(mut t: Tensor<f64>) -> Tensor<f64> {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    t
}

fn add(mut a: Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    a
}

/// Row `i` of an `[N, ...]` tensor.
fn row(t: &Tensor<f64>, i: usize) -> Tensor<f64> {
    let len = t.len() / t.shape()[0];
    Tensor::new(t.shape()[1..].to_vec(), t.data()[i * len..(i + 1) * len].to_vec()).expect("row shape")
}

struct Lookup<'a>(HashMap<&'a str, &'a Tensor<f64>>);

impl Lookup<'_> {
    fn get(&self, name: &str) -> &Tensor<f64> {
        self.0.get(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn conv(&self, name: &str, x: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        oracles::conv2d(x, self.get(&format!("{name}.weight")), self.get(&format!("{name}.bias")).data(), stride, pad)
    }
}

/// Tap activations `[N, C, H, W]` for an image set.
pub fn backbone_taps(model: &PriqModel<f64>, images: &Tensor<f64>) -> Vec<Tensor<f64>> {
    let p = Lookup(model.params().map(|p| (p.name.as_str(), &p.value)).collect());
    let cfg = &model.config().backbone;
    let mut x = relu(p.conv("stem", images, cfg.downsample_strides[0], cfg.stem_kernel / 2));
    let mut taps = vec![x.clone()];
    for s in 1..NUM_TAPS {
        for b in 0..cfg.stage_blocks[s - 1] {
            let name = format!("stage{s}.block{b}");
            let stride = if b == 0 { cfg.downsample_strides[s] } else { 1 };
            let h = relu(p.conv(&format!("{name}.conv1"), &x, stride, 1));
            let h = p.conv(&format!("{name}.conv2"), &h, 1, 1);
            let skip = if p.0.contains_key(format!("{name}.proj.weight").as_str()) {
                p.conv(&format!("{name}.proj"), &x, stride, 0)
            } else {
                x.clone()
            };
            x = relu(add(h, &skip));
        }
        taps.push(x.clone());
    }
    taps
}

/// Scores of one image set under the model's configuration.
pub fn predict_set(model: &PriqModel<f64>, images: &Tensor<f64>) -> Vec<f64> {
    let p = Lookup(model.params().map(|p| (p.name.as_str(), &p.value)).collect());
    let cfg = model.config();
    let n = images.shape()[0];
    let taps = backbone_taps(model, images);
    let features: Vec<Vec<f64>> = if !cfg.toggles.pseudo_ref {
        let last = &taps[NUM_TAPS - 1];
        (0..n).map(|i| oracles::reduce(&row(last, i), &[1, 2], true).data().to_vec()).collect()
    } else {
        let mut rows = vec![Vec::new(); n];
        for s in cfg.used_stages() {
            let z = &taps[s];
            let params: Vec<Tensor<f64>> = if cfg.variant.param_shapes(1).is_empty() {
                Vec::new()
            } else {
                vec![p.get(&format!("pr{s}.weight")).clone(), p.get(&format!("pr{s}.bias")).clone()]
            };
            let zbar = oracles::pseudo_reference(cfg.variant, &params, z);
            for (i, feats) in rows.iter_mut().enumerate() {
                let zi = row(z, i);
                if cfg.toggles.ssim {
                    feats.extend(oracles::channel_ssim(&zi, &zbar, cfg.ssim.c1, cfg.ssim.c2));
                } else {
                    feats.extend(oracles::concat_aggregation(&zi, &zbar));
                }
            }
        }
        rows
    };
    let f = features[0].len();
    let flat = Tensor::new(vec![n, f], features.concat()).expect("feature matrix");
    oracles::linear(&flat, p.get("head.weight"), p.get("head.bias").data()).into_data()
}

use rand::seq::SliceRandom;
use rand::Rng;

use super::gradients::{toy_backbone, TOY_SIDE};
use super::{max_abs, reference, rng, uniform, Runner, SuiteReport, Tally};
use crate::backbone::{Backbone, BackboneConfig};
use crate::error::Result;
use crate::model::{ModelConfig, PriqModel, Toggles};
use crate::params;
use crate::pseudo_ref::PrVariant;
use crate::tensor::{Real, Tape, Tensor};

const CASES: usize = 3;

fn arms() -> Vec<(PrVariant, Toggles)> {
    let mut arms: Vec<(PrVariant, Toggles)> = PrVariant::ALL.iter().map(|&v| (v, Toggles::default())).collect();
    arms.push((PrVariant::LocationWeight, Toggles { pseudo_ref: true, ssim: true, pyramid: false }));
    arms.push((PrVariant::LocationWeight, Toggles { pseudo_ref: true, ssim: false, pyramid: true }));
    arms.push((PrVariant::LocationWeight, Toggles::BASELINE));
    arms
}

fn rows<T: Real>(t: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let len = t.len() / t.shape()[0];
    let data: Vec<T> = idx.iter().flat_map(|&i| t.data()[i * len..(i + 1) * len].iter().copied()).collect();
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("row selection")
}

fn pyramid_features(model: &PriqModel<f64>, images: &Tensor<f64>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = model.bind_frozen(&mut tape)?;
    let x = tape.constant(images.clone())?;
    let f = model.pyramid_features(&mut tape, &vars, x, &[images.shape()[0]])?;
    Ok(tape.value(f).data().to_vec())
}

fn taps(backbone: &Backbone<f64>, images: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
    let mut tape = Tape::new();
    let vars = params::bind_frozen(&mut tape, backbone.params())?;
    let x = tape.constant(images.clone())?;
    let stacks = backbone.forward_set(&mut tape, &vars, x)?;
    Ok(stacks.iter().map(|s| tape.value(s.data).clone()).collect())
}

fn bit_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Set equivariance, the identical-set fixed point, baseline independence
/// from set composition, agreement with the straight-line reference, and
/// backbone per-image independence and determinism.
pub fn architecture_suite(seed: u64) -> Result<SuiteReport> {
    let mut run = Runner::new("architecture");
    let mut r = rng(seed, 400);
    let side = 64;

    for (variant, toggles) in arms() {
        let arm = format!("{}_{}", variant.name(), toggles.label());
        let backbone = BackboneConfig { seed: r.random(), ..BackboneConfig::default() };
        let config = ModelConfig { backbone, variant, toggles, ..Default::default() };
        let model = PriqModel::<f64>::build(&config)?;
        let model32 = model.cast::<f32>();

        let mut equi = Tally::new(format!("{arm}: permutation equivariance f32"), 1e-6);
        let mut same = Tally::new(format!("{arm}: identical set, identical scores"), 0.0);
        let mut ones = Tally::new(format!("{arm}: identical set, all-ones SSIM vector"), 1e-12);
        let mut oracle = Tally::new(format!("{arm}: reference composition"), 1e-10);
        for _ in 0..CASES {
            let n = r.random_range(2..6);
            let images = uniform(&[n, 3, side, side], 0.0, 1.0, &mut r);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let images32 = images.cast::<f32>();
            let base = model32.score(&images32, &[n])?;
            let shuffled = model32.score(&rows(&images32, &perm), &[n])?;
            let err = perm.iter().enumerate().map(|(k, &p)| (shuffled[k] - base[p]).abs() as f64).fold(0.0, f64::max);
            equi.record(err);

            let repeated = rows(&images, &vec![0; n]);
            let scores = model.score(&repeated, &[n])?;
            same.record(scores.iter().map(|s| (s - scores[0]).abs()).fold(0.0, f64::max));
            if toggles.pseudo_ref && toggles.ssim {
                let f = pyramid_features(&model, &repeated)?;
                ones.record(f.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max));
            }

            let got = model.score(&images, &[n])?;
            oracle.record(max_abs(&got, &reference::predict_set(&model, &images)));
        }
        run.push(equi);
        run.push(same);
        if ones.cases > 0 {
            run.push(ones);
        }
        run.push(oracle);

        if !toggles.pseudo_ref {
            let mut inv = Tally::new("baseline: scores independent of set composition", 0.0);
            let pool = uniform(&[6, 3, side, side], 0.0, 1.0, &mut r);
            let alone: Vec<f64> = (0..6).map(|i| model.score(&rows(&pool, &[i]), &[1]).map(|s| s[0])).collect::<Result<_>>()?;
            for _ in 0..CASES {
                let mut idx: Vec<usize> = (0..6).collect();
                idx.shuffle(&mut r);
                idx.truncate(r.random_range(2..7));
                let mut tape = Tape::new();
                let vars = model.bind_frozen(&mut tape)?;
                let x = tape.constant(rows(&pool, &idx))?;
                let out = model.predict_baseline(&mut tape, &vars, x)?;
                let expect: Vec<f64> = idx.iter().map(|&i| alone[i]).collect();
                inv.record(bit_diff(tape.value(out).data(), &expect));
            }
            run.push(inv);
        }
    }

    let mut indep = Tally::new("backbone: per-image independence", 0.0);
    let mut det = Tally::new("backbone: seeded determinism", 0.0);
    for _ in 0..CASES {
        let config = toy_backbone(r.random());
        let backbone = Backbone::<f64>::build(&config)?;
        let again = Backbone::<f64>::build(&config)?;
        det.record(bit_diff(params::flatten(backbone.params()).data(), params::flatten(again.params()).data()));

        let (na, nb) = (r.random_range(1..4), r.random_range(1..4));
        let a = uniform(&[na, 3, TOY_SIDE, TOY_SIDE], 0.0, 1.0, &mut r);
        let b = uniform(&[nb, 3, TOY_SIDE, TOY_SIDE], 0.0, 1.0, &mut r);
        let joint = taps(&backbone, &Tensor::concat(&[&a, &b])?)?;
        let (ta, tb) = (taps(&backbone, &a)?, taps(&backbone, &b)?);
        for s in 0..joint.len() {
            let split = Tensor::concat(&[&ta[s], &tb[s]])?;
            indep.record(bit_diff(joint[s].data(), split.data()));
        }
        let repeated = taps(&backbone, &rows(&a, &[0; 4]))?;
        let single = taps(&backbone, &rows(&a, &[0]))?;
        for s in 0..single.len() {
            for i in 0..4 {
                indep.record(bit_diff(rows(&repeated[s], &[i]).data(), single[s].data()));
            }
        }
        let twice = taps(&backbone, &a)?;
        for s in 0..twice.len() {
            det.record(bit_diff(twice[s].data(), ta[s].data()));
        }
        let oracle = reference::backbone_taps(&PriqModel::build(&ModelConfig { backbone: config, ..Default::default() })?, &a);
        for s in 0..oracle.len() {
            indep.record(if max_abs(oracle[s].data(), ta[s].data()) <= 1e-10 { 0.0 } else { f64::INFINITY });
        }
    }
    run.push(indep);
    run.push(det);
    Ok(run.finish())
}

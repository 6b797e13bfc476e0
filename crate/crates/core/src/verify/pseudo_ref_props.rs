use rand::seq::SliceRandom;
use rand::Rng;

use super::{max_abs, rng, uniform, Runner, SuiteReport, Tally};
use crate::backbone::FeatureStack;
use crate::error::Result;
use crate::pseudo_ref::{compute_weights, pseudo_reference, PrVariant};
use crate::tensor::{Real, Tape, Tensor};

const CASES: usize = 20;

struct Outcome<T> {
    /// Weights expanded to `[N, C, H, W]`.
    weights: Vec<T>,
    zbar: Vec<T>,
}

fn evaluate<T: Real>(variant: PrVariant, params: &[Tensor<T>], z: &Tensor<T>) -> Result<Outcome<T>> {
    let [n, c, h, w] = *z.shape() else { unreachable!("stack is rank 4") };
    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.constant(p.clone())).collect::<Result<Vec<_>, _>>()?;
    let fs = FeatureStack { stage: 0, data: tape.constant(z.clone())? };
    let field = compute_weights(&mut tape, variant, &vars, &fs)?;
    let zbar = pseudo_reference(&mut tape, &fs, &field)?;
    let raw = field.data.map(|v| tape.value(v).data().to_vec());
    let weights = (0..n * c * h * w)
        .map(|idx| {
            let (i, ch, pos) = (idx / (c * h * w), idx / (h * w) % c, idx % (h * w));
            match (&raw, variant) {
                (None, _) => T::one() / T::from_usize(n).expect("set size"),
                (Some(d), PrVariant::ScalarWeight) => d[i],
                (Some(d), PrVariant::ChannelWeight) => d[i * c + ch],
                (Some(d), PrVariant::LocationWeight) => d[i * h * w + pos],
                (Some(d), _) => d[idx],
            }
        })
        .collect();
    Ok(Outcome { weights, zbar: tape.value(zbar).data().to_vec() })
}

fn permute_rows<T: Real>(z: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let len = z.len() / z.shape()[0];
    let data = perm.iter().flat_map(|&p| z.data()[p * len..(p + 1) * len].iter().copied()).collect();
    let mut shape = z.shape().to_vec();
    shape[0] = perm.len();
    Tensor::new(shape, data).expect("row selection")
}

/// Softmax normalization, permutation invariance, convex bounds, the
/// identical-set fixed point and the zero-parameter reduction, per variant.
pub fn pseudo_ref_suite(seed: u64) -> Result<SuiteReport> {
    let mut run = Runner::new("pseudo-reference");
    let mut r = rng(seed, 300);
    for variant in PrVariant::ALL {
        let v = variant.name();
        let mut norm = Tally::new(format!("{v}: weights sum to 1"), 1e-6);
        let mut perm = Tally::new(format!("{v}: permutation invariance f32"), 1e-6);
        let mut convex = Tally::new(format!("{v}: convex-combination bounds"), 1e-12);
        let mut fixed = Tally::new(format!("{v}: identical-set fixed point"), 1e-12);
        let mut zero = Tally::new(format!("{v}: zero parameters give mean"), 1e-12);
        for _ in 0..CASES {
            let (n, c, h, w) = (r.random_range(1..7), r.random_range(1..6), r.random_range(1..5), r.random_range(1..5));
            let z = uniform(&[n, c, h, w], -2.0, 2.0, &mut r);
            let params: Vec<Tensor<f64>> = variant.param_shapes(c).iter().map(|s| uniform(s, -2.0, 2.0, &mut r)).collect();

            for prec in [false, true] {
                let sums = if prec {
                    let p32: Vec<Tensor<f32>> = params.iter().map(Tensor::cast).collect();
                    slice_sums(&evaluate(variant, &p32, &z.cast::<f32>())?.weights, n)
                } else {
                    slice_sums(&evaluate(variant, &params, &z)?.weights, n)
                };
                norm.record(sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max));
            }

            let p32: Vec<Tensor<f32>> = params.iter().map(Tensor::cast).collect();
            let z32 = z.cast::<f32>();
            let base = evaluate(variant, &p32, &z32)?.zbar;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            let shuffled = evaluate(variant, &p32, &permute_rows(&z32, &order))?.zbar;
            perm.record(base.iter().zip(&shuffled).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max));

            let out = evaluate(variant, &params, &z)?;
            let plane = c * h * w;
            let mut violation = 0.0f64;
            for (j, &zb) in out.zbar.iter().enumerate() {
                let column = (0..n).map(|i| z.data()[i * plane + j]);
                let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                violation = violation.max(lo - zb).max(zb - hi);
            }
            convex.record(violation);

            let one = uniform(&[1, c, h, w], -2.0, 2.0, &mut r);
            let same = permute_rows(&one, &vec![0; n]);
            let fp = evaluate(variant, &params, &same)?;
            fixed.record(max_abs(&fp.zbar, one.data()));

            let zeros: Vec<Tensor<f64>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            let reduced = evaluate(variant, &zeros, &z)?.zbar;
            let mean = evaluate(PrVariant::Mean, &[], &z)?.zbar;
            zero.record(max_abs(&reduced, &mean));
        }
        for t in [norm, perm, convex, fixed, zero] {
            run.push(t);
        }
    }
    Ok(run.finish())
}

/// `sum_i w[i, j]` for every slice `j`, accumulated in `f64`.
fn slice_sums<T: Real>(weights: &[T], n: usize) -> Vec<f64> {
    let len = weights.len() / n;
    (0..len).map(|j| (0..n).map(|i| weights[i * len + j].to_f64().expect("finite")).sum()).collect()
}

use rand::seq::SliceRandom;
use rand::Rng;

use super::{max_abs, oracles, rng, uniform, Runner, SuiteReport, Tally};
use crate::backbone::FeatureStack;
use crate::error::Result;
use crate::harness::{pearson, spearman};
use crate::pseudo_ref::{compute_weights, pseudo_reference, PrVariant};
use crate::tensor::{BinaryMode, ReduceMode, SsimConstants, Tape, Tensor};

const TOL: f64 = 1e-12;
const CASES: usize = 24;

/// Tape operations against the naive loops in [`oracles`], 64-bit.
pub fn oracle_suite(seed: u64) -> Result<SuiteReport> {
    let mut run = Runner::new("oracle");
    let mut r = rng(seed, 100);

    let mut t = Tally::new("conv2d", TOL);
    for case in 0..CASES {
        let (input, kernel, bias, stride, pad) = if case == 0 {
            (uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r), uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r), uniform(&[4], -1.0, 1.0, &mut r), 2, 1)
        } else {
            let (n, cin, cout) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5));
            let (h, w) = (r.random_range(3..10), r.random_range(3..10));
            let k = r.random_range(1..4);
            let pad = r.random_range(0..2);
            let stride = r.random_range(1..3);
            (
                uniform(&[n, cin, h, w], -1.0, 1.0, &mut r),
                uniform(&[cout, cin, k, k], -1.0, 1.0, &mut r),
                uniform(&[cout], -1.0, 1.0, &mut r),
                stride,
                pad,
            )
        };
        let mut tape = Tape::new();
        let (x, k, b) = (tape.constant(input.clone())?, tape.constant(kernel.clone())?, tape.constant(bias.clone())?);
        let out = tape.conv2d(x, k, b, stride, pad)?;
        let expect = oracles::conv2d(&input, &kernel, bias.data(), stride, pad);
        t.record(shape_checked(tape.value(out), &expect));
    }
    run.push(t);

    let mut t = Tally::new("linear", TOL);
    for case in 0..CASES {
        let (n, fin, fout) = if case == 0 { (5, 7, 3) } else { (r.random_range(1..6), r.random_range(1..9), r.random_range(1..6)) };
        let (input, weight, bias) =
            (uniform(&[n, fin], -2.0, 2.0, &mut r), uniform(&[fout, fin], -1.0, 1.0, &mut r), uniform(&[fout], -1.0, 1.0, &mut r));
        let mut tape = Tape::new();
        let (x, w, b) = (tape.constant(input.clone())?, tape.constant(weight.clone())?, tape.constant(bias.clone())?);
        let out = tape.linear(x, w, b)?;
        t.record(shape_checked(tape.value(out), &oracles::linear(&input, &weight, bias.data())));
    }
    run.push(t);

    for max in [true, false] {
        let mut t = Tally::new(if max { "max_pool2d" } else { "avg_pool2d" }, TOL);
        for _ in 0..CASES {
            let window = r.random_range(1..4);
            let pad = r.random_range(0..window);
            let stride = r.random_range(1..3);
            let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(window..9), r.random_range(window..9)];
            let input = uniform(&shape, -1.0, 1.0, &mut r);
            let mut tape = Tape::new();
            let x = tape.constant(input.clone())?;
            let (out, expect) = if max {
                (tape.max_pool2d(x, window, stride, pad)?, oracles::max_pool2d(&input, window, stride, pad))
            } else {
                (tape.avg_pool2d(x, window, stride, pad)?, oracles::avg_pool2d(&input, window, stride, pad))
            };
            t.record(shape_checked(tape.value(out), &expect));
        }
        run.push(t);
    }

    let mut t = Tally::new("relu", TOL);
    for _ in 0..CASES {
        let input = uniform(&[r.random_range(1..5), r.random_range(1..7)], -1.0, 1.0, &mut r);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone())?;
        let out = tape.relu(x)?;
        let expect: Vec<f64> = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        t.record(max_abs(tape.value(out).data(), &expect));
    }
    run.push(t);

    for mode in [ReduceMode::Sum, ReduceMode::Mean] {
        let mut t = Tally::new(format!("reduce_{mode:?}").to_lowercase(), TOL);
        for _ in 0..CASES {
            let rank = r.random_range(1..5);
            let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..5)).collect();
            let mut axes: Vec<usize> = (0..rank).filter(|_| r.random_bool(0.5)).collect();
            if axes.is_empty() {
                axes.push(r.random_range(0..rank));
            }
            let input = uniform(&shape, -1.0, 1.0, &mut r);
            let mut tape = Tape::new();
            let x = tape.constant(input.clone())?;
            let out = tape.reduce(x, &axes, mode)?;
            let expect = oracles::reduce(&input, &axes, mode == ReduceMode::Mean);
            t.record(max_abs(tape.value(out).data(), expect.data()));
        }
        run.push(t);
    }

    let mut t = Tally::new("elementwise", TOL);
    for _ in 0..CASES {
        let (n, c, h, w) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let a = uniform(&[n, c, h, w], -1.0, 1.0, &mut r);
        let same = uniform(&[n, c, h, w], -1.0, 1.0, &mut r);
        let narrow = uniform(&[n, 1, h, w], -1.0, 1.0, &mut r);
        let mut tape = Tape::new();
        let (va, vs, vn) = (tape.constant(a.clone())?, tape.constant(same.clone())?, tape.constant(narrow.clone())?);
        let add = tape.elementwise(va, vs, BinaryMode::Add)?;
        let mul = tape.elementwise(va, vs, BinaryMode::Mul)?;
        let bmul = tape.elementwise(va, vn, BinaryMode::Mul)?;
        let sum: Vec<f64> = a.data().iter().zip(same.data()).map(|(x, y)| x + y).collect();
        let prod: Vec<f64> = a.data().iter().zip(same.data()).map(|(x, y)| x * y).collect();
        t.record(max_abs(tape.value(add).data(), &sum));
        t.record(max_abs(tape.value(mul).data(), &prod));
        t.record(max_abs(tape.value(bmul).data(), oracles::broadcast_mul(&narrow, &a).data()));
    }
    run.push(t);

    let mut t = Tally::new("softmax_along", TOL);
    for _ in 0..CASES {
        let (n, m) = (r.random_range(1..6), r.random_range(1..6));
        let input = uniform(&[n, m], -5.0, 5.0, &mut r);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone())?;
        let out = tape.softmax_along(x, 0)?;
        let mut worst = 0.0f64;
        for j in 0..m {
            let column: Vec<f64> = (0..n).map(|i| input.at(&[i, j])).collect();
            let got: Vec<f64> = (0..n).map(|i| tape.value(out).at(&[i, j])).collect();
            worst = worst.max(max_abs(&got, &oracles::softmax(&column)));
        }
        t.record(worst);
    }
    run.push(t);

    let mut t = Tally::new("huber_loss", TOL);
    for _ in 0..CASES {
        let n = r.random_range(1..12);
        let delta = r.random_range(0.1..2.0);
        let (p, q) = (uniform(&[n], -2.0, 2.0, &mut r), uniform(&[n], -2.0, 2.0, &mut r));
        let mut tape = Tape::new();
        let (vp, vq) = (tape.constant(p.clone())?, tape.constant(q.clone())?);
        let out = tape.huber_loss(vp, vq, delta)?;
        t.record((tape.value(out).data()[0] - oracles::huber(p.data(), q.data(), delta)).abs());
    }
    run.push(t);

    let mut t = Tally::new("channel_ssim", TOL);
    let k = SsimConstants::default();
    for case in 0..CASES {
        let (c, h, w) = (r.random_range(1..6), r.random_range(1..6), r.random_range(2..6));
        let x = uniform(&[c, h, w], -1.0, 1.0, &mut r);
        let y = if case % 4 == 0 { Tensor::full(&[c, h, w], 0.3) } else { uniform(&[c, h, w], 0.0, 2.0, &mut r) };
        let mut tape = Tape::new();
        let (vx, vy) = (tape.constant(x.clone())?, tape.constant(y.clone())?);
        let out = tape.channel_ssim(vx, vy, k)?;
        t.record(max_abs(tape.value(out).data(), &oracles::channel_ssim(&x, &y, k.c1, k.c2)));
    }
    run.push(t);

    let mut t = Tally::new("concat_aggregation", TOL);
    for _ in 0..CASES {
        let shape = [r.random_range(1..6), r.random_range(1..5), r.random_range(1..5)];
        let (zi, zbar) = (uniform(&shape, -1.0, 1.0, &mut r), uniform(&shape, -1.0, 1.0, &mut r));
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(zi.clone())?, tape.constant(zbar.clone())?);
        let out = crate::head::concat_aggregation(&mut tape, a, b)?;
        t.record(max_abs(tape.value(out).data(), &oracles::concat_aggregation(&zi, &zbar)));
    }
    run.push(t);

    for variant in PrVariant::ALL {
        let mut t = Tally::new(format!("pseudo_reference_{}", variant.name()), TOL);
        for _ in 0..CASES {
            let shape = [r.random_range(1..5), r.random_range(1..5), r.random_range(1..4), r.random_range(1..4)];
            let z = uniform(&shape, -1.0, 1.0, &mut r);
            let params: Vec<Tensor<f64>> =
                variant.param_shapes(shape[1]).iter().map(|s| uniform(s, -1.5, 1.5, &mut r)).collect();
            let mut tape = Tape::new();
            let vars = params.iter().map(|p| tape.constant(p.clone())).collect::<Result<Vec<_>, _>>()?;
            let fs = FeatureStack { stage: 0, data: tape.constant(z.clone())? };
            let w = compute_weights(&mut tape, variant, &vars, &fs)?;
            let zbar = pseudo_reference(&mut tape, &fs, &w)?;
            t.record(max_abs(tape.value(zbar).data(), oracles::pseudo_reference(variant, &params, &z).data()));
        }
        run.push(t);
    }

    let mut t = Tally::new("pearson", TOL);
    for case in 0..CASES {
        let n = if case == 0 { 1000 } else { r.random_range(3..200) };
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + r.random_range(-1.0..1.0)).collect();
        t.record((pearson(&x, &y)? - oracles::pearson(&x, &y)).abs());
    }
    run.push(t);

    let mut t = Tally::new("spearman_with_ties", TOL);
    for case in 0..CASES {
        let n = r.random_range(3..120);
        // coarse grids force ties in both vectors
        let levels: f64 = if case % 2 == 0 { 5.0 } else { 40.0 };
        let mut x: Vec<f64> = (0..n).map(|_| (r.random_range(0.0..1.0) * levels).floor()).collect();
        let y: Vec<f64> = x.iter().map(|v| ((v + r.random_range(0.0..levels)) / 2.0).floor()).collect();
        if case == 1 {
            x.shuffle(&mut r);
        }
        match (spearman(&x, &y), x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0])) {
            (Ok(s), false) => t.record((s - oracles::spearman(&x, &y)).abs()),
            (Err(_), true) => t.record(0.0),
            _ => t.record(f64::INFINITY),
        }
    }
    run.push(t);

    Ok(run.finish())
}

fn shape_checked(got: &Tensor<f64>, expect: &Tensor<f64>) -> f64 {
    if got.shape() != expect.shape() {
        return f64::INFINITY;
    }
    max_abs(got.data(), expect.data())
}

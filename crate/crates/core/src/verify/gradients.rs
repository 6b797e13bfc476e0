use rand::Rng;

use super::{rng, uniform, Runner, SuiteReport, Tally};
use crate::backbone::{BackboneConfig, FeatureStack};
use crate::error::Result;
use crate::head::{self, Aggregation};
use crate::model::{ModelConfig, PriqModel, Toggles};
use crate::pseudo_ref::{compute_weights, pseudo_reference, PrVariant};
use crate::tensor::{finite_diff_check, BinaryMode, ReduceMode, SsimConstants, Tape, Tensor, Var};

const EPSILON: f64 = 1e-6;
const TOL: f64 = 1e-4;
const CASES: usize = 3;

/// Sum of `out * weights`, turning any output into a scalar with a
/// non-degenerate gradient.
fn project(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone())?;
    let prod = tape.elementwise(out, w, BinaryMode::Mul)?;
    let axes: Vec<usize> = (0..tape.shape(prod).len()).collect();
    Ok(tape.reduce(prod, &axes, ReduceMode::Sum)?)
}

/// Splits a flat vector into tensors of the given shapes.
fn carve(tape: &mut Tape<f64>, flat: Var, shapes: &[Vec<usize>]) -> Result<Vec<Var>> {
    let mut offset = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n: usize = s.iter().product();
        let part = tape.narrow(flat, offset, n)?;
        out.push(tape.reshape(part, s)?);
        offset += n;
    }
    Ok(out)
}

fn flatten(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    let n = data.len();
    Tensor::new(vec![n], data).expect("flat length")
}

/// Checks `loss(args)` with respect to every argument at once by packing
/// them into one flat input.
fn check_packed(
    tally: &mut Tally,
    args: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<()> {
    let shapes: Vec<Vec<usize>> = args.iter().map(|a| a.shape().to_vec()).collect();
    let flat = flatten(&args.iter().collect::<Vec<_>>());
    let err = finite_diff_check(
        |tape: &mut Tape<f64>, x: Var| {
            let vars = carve(tape, x, &shapes)?;
            f(tape, &vars)
        },
        &flat,
        EPSILON,
    )?;
    tally.record(err);
    Ok(())
}

/// Tiny backbone whose smallest tap is still 2x2 for a 36x36 input.
pub(crate) fn toy_backbone(seed: u64) -> BackboneConfig {
    BackboneConfig {
        stem_kernel: 7,
        stage_channels: vec![4, 4, 6, 8, 8],
        stage_blocks: vec![1, 1, 1, 1],
        downsample_strides: vec![2, 2, 2, 2, 2],
        seed,
    }
}

pub(crate) const TOY_SIDE: usize = 36;

/// Central finite differences against the tape gradients, 64-bit.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut run = Runner::new("gradient");
    let mut r = rng(seed, 200);

    let mut t = Tally::new("conv2d", TOL);
    for case in 0..CASES {
        let (stride, pad) = (1 + case % 2, case % 2);
        let x = uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r);
        let k = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
        let b = uniform(&[3], -1.0, 1.0, &mut r);
        let probe = uniform(&[2, 3, (5 + 2 * pad - 3) / stride + 1, (5 + 2 * pad - 3) / stride + 1], -1.0, 1.0, &mut r);
        check_packed(&mut t, &[x, k, b], |tape, v| {
            let out = tape.conv2d(v[0], v[1], v[2], stride, pad)?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    let mut t = Tally::new("linear", TOL);
    for _ in 0..CASES {
        let args = [uniform(&[4, 5], -1.0, 1.0, &mut r), uniform(&[3, 5], -1.0, 1.0, &mut r), uniform(&[3], -1.0, 1.0, &mut r)];
        let probe = uniform(&[4, 3], -1.0, 1.0, &mut r);
        check_packed(&mut t, &args, |tape, v| {
            let out = tape.linear(v[0], v[1], v[2])?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    let mut t = Tally::new("relu", TOL);
    for _ in 0..CASES {
        // keep inputs away from the kink
        let x = Tensor::from_fn(&[2, 3, 4], |_| {
            let v: f64 = r.random_range(0.05..1.0);
            if r.random_bool(0.5) { v } else { -v }
        });
        let probe = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
        check_packed(&mut t, &[x], |tape, v| {
            let out = tape.relu(v[0])?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    for max in [true, false] {
        let mut t = Tally::new(if max { "max_pool2d" } else { "avg_pool2d" }, TOL);
        for case in 0..CASES {
            let (window, stride, pad) = [(2, 2, 0), (3, 1, 1), (3, 2, 1)][case % 3];
            // distinct values so the argmax is unambiguous
            let mut values: Vec<f64> = (0..2 * 2 * 6 * 6).map(|i| i as f64 * 0.01).collect();
            rand::seq::SliceRandom::shuffle(values.as_mut_slice(), &mut r);
            let x = Tensor::new(vec![2, 2, 6, 6], values)?;
            let side = (6 + 2 * pad - window) / stride + 1;
            let probe = uniform(&[2, 2, side, side], -1.0, 1.0, &mut r);
            check_packed(&mut t, &[x], |tape, v| {
                let out = if max { tape.max_pool2d(v[0], window, stride, pad)? } else { tape.avg_pool2d(v[0], window, stride, pad)? };
                project(tape, out, &probe)
            })?;
        }
        run.push(t);
    }

    for mode in [ReduceMode::Sum, ReduceMode::Mean] {
        let mut t = Tally::new(format!("reduce_{mode:?}").to_lowercase(), TOL);
        for axes in [vec![0], vec![1, 2], vec![0, 2]] {
            let x = uniform(&[3, 4, 2], -1.0, 1.0, &mut r);
            let out_shape: Vec<usize> = (0..3).filter(|a| !axes.contains(a)).map(|a| [3, 4, 2][a]).collect();
            let probe = uniform(&out_shape, -1.0, 1.0, &mut r);
            check_packed(&mut t, &[x], |tape, v| {
                let out = tape.reduce(v[0], &axes, mode)?;
                project(tape, out, &probe)
            })?;
        }
        run.push(t);
    }

    let mut t = Tally::new("elementwise", TOL);
    for case in 0..CASES {
        let b_shape: &[usize] = [&[2, 3, 4, 4][..], &[2, 1, 4, 4], &[2, 3, 1, 1]][case];
        let mode = if case == 0 { BinaryMode::Add } else { BinaryMode::Mul };
        let args = [uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut r), uniform(b_shape, -1.0, 1.0, &mut r)];
        let probe = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
        check_packed(&mut t, &args, |tape, v| {
            let out = tape.elementwise(v[0], v[1], mode)?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    let mut t = Tally::new("softmax_along", TOL);
    for axis in 0..CASES {
        let x = uniform(&[3, 4, 2], -2.0, 2.0, &mut r);
        let probe = uniform(&[3, 4, 2], -1.0, 1.0, &mut r);
        check_packed(&mut t, &[x], |tape, v| {
            let out = tape.softmax_along(v[0], axis)?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    let mut t = Tally::new("huber_loss", TOL);
    for delta in [0.3, 1.0, 5.0] {
        // residuals avoid |e| == delta
        let pred = uniform(&[6], -1.0, 1.0, &mut r);
        let target = Tensor::from_fn(&[6], |i| pred.data()[i] + [0.1, -0.2, 0.7, -0.9, 1.6, -2.4][i]);
        check_packed(&mut t, &[pred, target], |tape, v| Ok(tape.huber_loss(v[0], v[1], delta)?))?;
    }
    run.push(t);

    let mut t = Tally::new("channel_ssim", TOL);
    for case in 0..CASES {
        let x = uniform(&[3, 4, 5], -1.0, 1.0, &mut r);
        let y = if case == 0 { Tensor::full(&[3, 4, 5], 0.2) } else { uniform(&[3, 4, 5], 0.0, 1.0, &mut r) };
        let probe = uniform(&[3], -1.0, 1.0, &mut r);
        check_packed(&mut t, &[x, y], |tape, v| {
            let out = tape.channel_ssim(v[0], v[1], SsimConstants::default())?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    let mut t = Tally::new("shape_ops", TOL);
    for _ in 0..CASES {
        let a = uniform(&[3, 2, 2], -1.0, 1.0, &mut r);
        let b = uniform(&[3, 2, 2], -1.0, 1.0, &mut r);
        let probe = uniform(&[2, 14], -1.0, 1.0, &mut r);
        check_packed(&mut t, &[a, b], |tape, v| {
            let sel = tape.select(v[0], 1)?;
            let sel = tape.reshape(sel, &[4])?;
            let nar = tape.narrow(v[1], 1, 2)?;
            let nar = tape.reshape(nar, &[8])?;
            let cat = tape.concat(&[sel, nar, sel])?;
            let cat2 = tape.concat(&[nar, sel, nar])?;
            let cat2 = tape.narrow(cat2, 0, 16)?;
            let cat2 = tape.narrow(cat2, 2, 14)?;
            let cat = tape.narrow(cat, 0, 14)?;
            let stacked = tape.stack(&[cat, cat2])?;
            project(tape, stacked, &probe)
        })?;
    }
    run.push(t);

    let mut t = Tally::new("concat_aggregation", TOL);
    for _ in 0..CASES {
        let args = [uniform(&[3, 3, 2], -1.0, 1.0, &mut r), uniform(&[3, 3, 2], -1.0, 1.0, &mut r)];
        let probe = uniform(&[6], -1.0, 1.0, &mut r);
        check_packed(&mut t, &args, |tape, v| {
            let out = head::concat_aggregation(tape, v[0], v[1])?;
            project(tape, out, &probe)
        })?;
    }
    run.push(t);

    for variant in PrVariant::ALL {
        let mut t = Tally::new(format!("pseudo_reference_{}", variant.name()), TOL);
        for _ in 0..CASES {
            let c = 3;
            let mut args = vec![uniform(&[3, c, 3, 2], -1.0, 1.0, &mut r)];
            args.extend(variant.param_shapes(c).iter().map(|s| uniform(s, -1.0, 1.0, &mut r)));
            let probe = uniform(&[c, 3, 2], -1.0, 1.0, &mut r);
            check_packed(&mut t, &args, |tape, v| {
                let z = FeatureStack { stage: 0, data: v[0] };
                let w = compute_weights(tape, variant, &v[1..], &z)?;
                let zbar = pseudo_reference(tape, &z, &w)?;
                project(tape, zbar, &probe)
            })?;
        }
        run.push(t);
    }

    // Downstream pyramid composition on toy 6x6..2x2 taps: weights,
    // pseudo-reference, aggregation, head, Huber loss, differentiated with
    // respect to the taps and every parameter.
    for variant in PrVariant::ALL {
        for agg in [Aggregation::Ssim, Aggregation::Concat] {
            let name = format!("pyramid_head_{}_{}", variant.name(), if agg == Aggregation::Ssim { "ssim" } else { "concat" });
            let mut t = Tally::new(name, TOL);
            let channels = [4, 4, 6, 8, 8];
            let sides = [6, 5, 4, 3, 2];
            let n = 3;
            let mut args = Vec::new();
            for s in 0..5 {
                args.push(uniform(&[n, channels[s], sides[s], sides[s]], 0.0, 1.0, &mut r));
                args.extend(variant.param_shapes(channels[s]).iter().map(|sh| uniform(sh, -0.5, 0.5, &mut r)));
            }
            let features: usize = channels.iter().map(|&c| agg.features_per_stage(c)).sum();
            args.push(uniform(&[1, features], -0.5, 0.5, &mut r));
            args.push(uniform(&[1], -0.5, 0.5, &mut r));
            let target = Tensor::from_fn(&[n], |i| [0.2, 0.5, 0.9][i]);
            let per_stage = 1 + variant.param_shapes(1).len();
            check_packed(&mut t, &args, |tape, v| {
                let mut rows: Vec<Vec<Var>> = vec![Vec::new(); n];
                for s in 0..5 {
                    let base = s * per_stage;
                    let z = FeatureStack { stage: s, data: v[base] };
                    let w = compute_weights(tape, variant, &v[base + 1..base + per_stage], &z)?;
                    let zbar = pseudo_reference(tape, &z, &w)?;
                    for (i, row) in rows.iter_mut().enumerate() {
                        let zi = tape.select(z.data, i)?;
                        row.push(head::aggregate(tape, agg, zi, zbar, SsimConstants::default())?);
                    }
                }
                let rows = rows.iter().map(|row| tape.concat(row)).collect::<Result<Vec<_>, _>>()?;
                let feats = tape.stack(&rows)?;
                let h = v.len() - 2;
                let pred = head::regress(tape, &v[h..], feats)?;
                let target = tape.constant(target.clone())?;
                Ok(tape.huber_loss(pred, target, 1.0)?)
            })?;
            run.push(t);
        }
    }

    let mut arms: Vec<(PrVariant, Toggles)> = PrVariant::ALL.iter().map(|&v| (v, Toggles::default())).collect();
    arms.push((PrVariant::LocationWeight, Toggles { pseudo_ref: true, ssim: true, pyramid: false }));
    arms.push((PrVariant::LocationWeight, Toggles { pseudo_ref: true, ssim: false, pyramid: true }));
    arms.push((PrVariant::LocationWeight, Toggles::BASELINE));
    for (i, (variant, toggles)) in arms.into_iter().enumerate() {
        let config = ModelConfig { backbone: toy_backbone(seed.wrapping_add(i as u64)), variant, toggles, ..Default::default() };
        let model = PriqModel::<f64>::build(&config)?;
        let images = uniform(&[3, 3, TOY_SIDE, TOY_SIDE], 0.0, 1.0, &mut r);
        let target = Tensor::from_fn(&[3], |i| [0.3, 0.6, 0.8][i]);
        let mut t = Tally::new(format!("predict_set_huber_{}_{}", variant.name(), toggles.label()), TOL);
        let err = finite_diff_check(
            |tape: &mut Tape<f64>, flat: Var| {
                let vars = model.bind_flat(tape, flat)?;
                let x = tape.constant(images.clone())?;
                let pred = model.predict_set(tape, &vars, x)?;
                let target = tape.constant(target.clone())?;
                Ok::<_, crate::Error>(tape.huber_loss(pred, target, 1.0)?)
            },
            &model.flat_params(),
            EPSILON,
        )?;
        t.record(err);
        run.push(t);
    }

    Ok(run.finish())
}

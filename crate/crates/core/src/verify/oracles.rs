//! Naive reference implementations in `f64`, written as plain index loops
//! and deliberately sharing no code with the tape operations.

use crate::tensor::Tensor;

/// Direct cross-correlation with zero padding.
pub fn conv2d(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, w] = *input.shape() else { panic!("conv2d oracle expects rank 4") };
    let [cout, _, kh, kw] = *kernel.shape() else { panic!("conv2d oracle expects rank-4 kernel") };
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.at(&[b, ci, iy as usize, ix as usize]) * kernel.at(&[co, ci, ky, kx]);
                            }
                        }
                    }
                    out.data_mut()[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn linear(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
    let [n, fin] = *input.shape() else { panic!("linear oracle expects [N, F]") };
    let fout = weight.shape()[0];
    Tensor::from_fn(&[n, fout], |i| {
        let (r, o) = (i / fout, i % fout);
        bias[o] + (0..fin).map(|k| input.at(&[r, k]) * weight.at(&[o, k])).sum::<f64>()
    })
}

fn pool(input: &Tensor<f64>, window: usize, stride: usize, pad: usize, max: bool) -> Tensor<f64> {
    let [n, c, h, w] = *input.shape() else { panic!("pool oracle expects rank 4") };
    let ho = (h + 2 * pad - window) / stride + 1;
    let wo = (w + 2 * pad - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let v = input.at(&[b, ch, iy as usize, ix as usize]);
                            best = best.max(v);
                            sum += v;
                        }
                    }
                    out.data_mut()[idx] = if max { best } else { sum / (window * window) as f64 };
                    idx += 1;
                }
            }
        }
    }
    out
}

pub fn max_pool2d(input: &Tensor<f64>, window: usize, stride: usize, pad: usize) -> Tensor<f64> {
    pool(input, window, stride, pad, true)
}

/// Average pooling; padded positions count as zeros in the divisor.
pub fn avg_pool2d(input: &Tensor<f64>, window: usize, stride: usize, pad: usize) -> Tensor<f64> {
    pool(input, window, stride, pad, false)
}

/// Sum or mean over `axes` by visiting every input element once.
pub fn reduce(input: &Tensor<f64>, axes: &[usize], mean: bool) -> Tensor<f64> {
    let shape = input.shape();
    let out_shape: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).map(|a| shape[a]).collect();
    let mut out = Tensor::zeros(&out_shape);
    let mut multi = vec![0usize; shape.len()];
    for &v in input.data() {
        let mut o = 0;
        for (a, &m) in multi.iter().enumerate() {
            if !axes.contains(&a) {
                o = o * shape[a] + m;
            }
        }
        out.data_mut()[o] += v;
        for a in (0..shape.len()).rev() {
            multi[a] += 1;
            if multi[a] < shape[a] {
                break;
            }
            multi[a] = 0;
        }
    }
    if mean {
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        out.data_mut().iter_mut().for_each(|v| *v /= count as f64);
    }
    out
}

/// `[N, 1, H, W] * [N, C, H, W]` with the singleton channel stretched.
pub fn broadcast_mul(weights: &Tensor<f64>, features: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = *features.shape() else { panic!("expects rank 4") };
    Tensor::from_fn(&[n, c, h, w], |i| {
        let (b, ch, y, x) = (i / (c * h * w), i / (h * w) % c, i / w % h, i % w);
        weights.at(&[b, 0, y, x]) * features.at(&[b, ch, y, x])
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn huber(pred: &[f64], target: &[f64], delta: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let e = (pred[i] - target[i]).abs();
        total += if e <= delta { 0.5 * e * e } else { delta * (e - 0.5 * delta) };
    }
    total / pred.len() as f64
}

/// Global SSIM of two planes with population statistics.
pub fn ssim(x: &[f64], y: &[f64], c1: f64, c2: f64) -> f64 {
    let n = x.len() as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..x.len() {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cov = 0.0;
    for i in 0..x.len() {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cov += (x[i] - mx) * (y[i] - my);
    }
    vx /= n;
    vy /= n;
    cov /= n;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Per-channel SSIM of two `[C, H, W]` maps.
pub fn channel_ssim(x: &Tensor<f64>, y: &Tensor<f64>, c1: f64, c2: f64) -> Vec<f64> {
    let c = x.shape()[0];
    let plane = x.len() / c;
    (0..c).map(|ch| ssim(&x.data()[ch * plane..(ch + 1) * plane], &y.data()[ch * plane..(ch + 1) * plane], c1, c2)).collect()
}

/// `[GAP(z_i); GAP(z_bar)]`.
pub fn concat_aggregation(zi: &Tensor<f64>, zbar: &Tensor<f64>) -> Vec<f64> {
    let c = zi.shape()[0];
    let plane = zi.len() / c;
    let gap = |t: &Tensor<f64>| -> Vec<f64> {
        (0..c).map(|ch| t.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64).collect()
    };
    let mut out = gap(zi);
    out.extend(gap(zbar));
    out
}

/// `z_bar[c,h,w] = sum_i w(i, c, h, w) * z[i,c,h,w]` where `weight` looks up
/// the weight for a full index.
pub fn weighted_sum(z: &Tensor<f64>, weight: impl Fn(usize, usize, usize, usize) -> f64) -> Tensor<f64> {
    let [n, c, h, w] = *z.shape() else { panic!("expects rank 4") };
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += weight(i, ch, y, x) * z.at(&[i, ch, y, x]);
                }
                out.data_mut()[(ch * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Two-pass sample correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let dx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let dy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    num / (dx * dy).sqrt()
}

/// Ranks by counting: `1 + #smaller + (#equal - 1) / 2`.
pub fn brute_force_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&brute_force_ranks(x), &brute_force_ranks(y))
}

/// Pseudo-reference of one stack under `variant`, weights computed from
/// scratch: logits per image, softmax over the set axis, weighted sum.
pub fn pseudo_reference(variant: crate::pseudo_ref::PrVariant, params: &[Tensor<f64>], z: &Tensor<f64>) -> Tensor<f64> {
    use crate::pseudo_ref::PrVariant;
    let [n, c, h, w] = *z.shape() else { panic!("expects rank 4") };
    let gap = |i: usize, ch: usize| -> f64 {
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += z.at(&[i, ch, y, x]);
            }
        }
        s / (h * w) as f64
    };
    // logits[i][slice], with slice indexing (channel, y, x) at the variant's granularity
    let logit = |i: usize, ch: usize, y: usize, x: usize| -> f64 {
        match variant {
            PrVariant::Mean => 0.0,
            PrVariant::ScalarWeight => params[1].data()[0] + (0..c).map(|k| params[0].at(&[0, k]) * gap(i, k)).sum::<f64>(),
            PrVariant::ChannelWeight => params[1].data()[ch] + (0..c).map(|k| params[0].at(&[ch, k]) * gap(i, k)).sum::<f64>(),
            PrVariant::LocationWeight => {
                params[1].data()[0] + (0..c).map(|k| params[0].at(&[0, k, 0, 0]) * z.at(&[i, k, y, x])).sum::<f64>()
            }
            PrVariant::FullWeight => {
                params[1].data()[ch] + (0..c).map(|k| params[0].at(&[ch, k, 0, 0]) * z.at(&[i, k, y, x])).sum::<f64>()
            }
        }
    };
    let mut weights = vec![0.0; n * c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let l: Vec<f64> = (0..n).map(|i| logit(i, ch, y, x)).collect();
                for (i, p) in softmax(&l).into_iter().enumerate() {
                    weights[((i * c + ch) * h + y) * w + x] = p;
                }
            }
        }
    }
    weighted_sum(z, |i, ch, y, x| weights[((i * c + ch) * h + y) * w + x])
}

use super::tape::{Grads, Op, Var};
use super::{Real, Result, Tape, Tensor, TensorError};

/// Output positions `lo..hi` along one axis for which the kernel tap `k`
/// lands inside the unpadded input.
fn valid_range(k: usize, padding: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input index = o * stride + k - padding, must lie in [0, in_len)
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + padding > k { ((in_len + padding - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

pub(crate) fn conv_out_len(op: &'static str, input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument { op, detail: "stride must be positive".into() });
    }
    if k == 0 || k > input + 2 * padding {
        return Err(TensorError::InvalidArgument {
            op,
            detail: format!("window {k} does not fit input {input} with padding {padding}"),
        });
    }
    Ok((input + 2 * padding - k) / stride + 1)
}

impl<T: Real> Tape<T> {
    /// 2-D cross-correlation over an `[N, C_in, H, W]` batch.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check_live()?;
        let out = conv2d_forward(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        self.push("conv2d", out, Op::Conv2d { input, kernel, bias, stride, padding }, &[input, kernel, bias])
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    let &[n, ci, h, w] = input.shape() else {
        return Err(TensorError::ShapeMismatch { op: OP, detail: format!("input must be [N,C,H,W], got {:?}", input.shape()) });
    };
    let &[co, kci, kh, kw] = kernel.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("kernel must be [C_out,C_in,kh,kw], got {:?}", kernel.shape()),
        });
    };
    if kci != ci {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("input channel dimension C_in is {ci} but kernel expects {kci}"),
        });
    }
    if bias.shape() != [co] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("bias must be [{co}] (C_out), got {:?}", bias.shape()),
        });
    }
    let oh = conv_out_len(OP, h, kh, stride, padding).map_err(|e| name_dim(e, "height"))?;
    let ow = conv_out_len(OP, w, kw, stride, padding).map_err(|e| name_dim(e, "width"))?;

    let geom = Geometry { ci, h, w, kh, kw, oh, ow, stride, padding };
    let rows = ci * kh * kw;
    let plane = oh * ow;
    let mut col = vec![T::zero(); rows * plane];
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); n * co * plane];
    for b in 0..n {
        let cols = geom.im2col(&x[b * ci * h * w..(b + 1) * ci * h * w], &mut col);
        for o in 0..co {
            let orow = &mut out[(b * co + o) * plane..(b * co + o + 1) * plane];
            orow.fill(bias.data()[o]);
            for (r, &wt) in k[o * rows..(o + 1) * rows].iter().enumerate() {
                axpy(wt, &cols[r * plane..(r + 1) * plane], orow);
            }
        }
    }
    Tensor::new(vec![n, co, oh, ow], out)
}

/// Convolution geometry for one image.
#[derive(Clone, Copy)]
struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Unfolds one image `[C_in, H, W]` into `[C_in*kh*kw, oh*ow]`, returning
    /// the image itself for pointwise kernels.
    fn im2col<'a, T: Real>(&self, x: &'a [T], col: &'a mut [T]) -> &'a [T] {
        if self.is_pointwise() {
            return x;
        }
        let Geometry { ci, h, w, kh, kw, oh, ow, stride, padding } = *self;
        col.fill(T::zero());
        for c in 0..ci {
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                let (r0, r1) = valid_range(ki, padding, stride, h, oh);
                for kj in 0..kw {
                    let (c0, c1) = valid_range(kj, padding, stride, w, ow);
                    let row = ((c * kh + ki) * kw + kj) * oh * ow;
                    for r in r0..r1 {
                        let ir = r * stride + ki - padding;
                        let xrow = &xin[ir * w..(ir + 1) * w];
                        let dst = &mut col[row + r * ow..row + (r + 1) * ow];
                        for q in c0..c1 {
                            dst[q] = xrow[q * stride + kj - padding];
                        }
                    }
                }
            }
        }
        col
    }

    /// Adds a column-gradient matrix back into the image gradient.
    fn col2im<T: Real>(&self, col: &[T], gx: &mut [T]) {
        let Geometry { ci, h, w, kh, kw, oh, ow, stride, padding } = *self;
        if self.is_pointwise() {
            for (g, &c) in gx.iter_mut().zip(col) {
                *g = *g + c;
            }
            return;
        }
        for c in 0..ci {
            let gin = &mut gx[c * h * w..(c + 1) * h * w];
            for ki in 0..kh {
                let (r0, r1) = valid_range(ki, padding, stride, h, oh);
                for kj in 0..kw {
                    let (c0, c1) = valid_range(kj, padding, stride, w, ow);
                    let row = ((c * kh + ki) * kw + kj) * oh * ow;
                    for r in r0..r1 {
                        let ir = r * stride + ki - padding;
                        let src = &col[row + r * ow..row + (r + 1) * ow];
                        let grow = &mut gin[ir * w..(ir + 1) * w];
                        for q in c0..c1 {
                            let iq = q * stride + kj - padding;
                            grow[iq] = grow[iq] + src[q];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}

/// Dot product with eight interleaved accumulators (fixed summation order).
#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] = acc[l] + x[i * 8 + l] * y[i * 8 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..x.len() {
        tail = tail + x[i] * y[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn name_dim(e: TensorError, dim: &str) -> TensorError {
    match e {
        TensorError::InvalidArgument { op, detail } => TensorError::InvalidArgument { op, detail: format!("{dim}: {detail}") },
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    (input, x): (Var, &Tensor<T>),
    (kernel, kt): (Var, &Tensor<T>),
    bias: Var,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
    gout: &[T],
    grads: &mut Grads<'_, T>,
) {
    let [n, ci, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, _, kh, kw] = [kt.shape()[0], kt.shape()[1], kt.shape()[2], kt.shape()[3]];
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let geom = Geometry { ci, h, w, kh, kw, oh, ow, stride, padding };
    let rows = ci * kh * kw;
    let plane = oh * ow;
    let xd = x.data();
    let kd = kt.data();

    grads.acc(bias, |gb| {
        for b in 0..n {
            for (o, g) in gb.iter_mut().enumerate() {
                let gplane = &gout[(b * co + o) * plane..(b * co + o + 1) * plane];
                *g = *g + gplane.iter().copied().sum::<T>();
            }
        }
    });

    if grads.wants(kernel) {
        let mut col = vec![T::zero(); rows * plane];
        grads.acc(kernel, |gk| {
            for b in 0..n {
                let cols = geom.im2col(&xd[b * ci * h * w..(b + 1) * ci * h * w], &mut col);
                for o in 0..co {
                    let gplane = &gout[(b * co + o) * plane..(b * co + o + 1) * plane];
                    for r in 0..rows {
                        let idx = o * rows + r;
                        gk[idx] = gk[idx] + dot(gplane, &cols[r * plane..(r + 1) * plane]);
                    }
                }
            }
        });
    }

    if grads.wants(input) {
        let mut gcol = vec![T::zero(); rows * plane];
        grads.acc(input, |gx| {
            for b in 0..n {
                gcol.fill(T::zero());
                for o in 0..co {
                    let gplane = &gout[(b * co + o) * plane..(b * co + o + 1) * plane];
                    for (r, &wt) in kd[o * rows..(o + 1) * rows].iter().enumerate() {
                        axpy(wt, gplane, &mut gcol[r * plane..(r + 1) * plane]);
                    }
                }
                geom.col2im(&gcol, &mut gx[b * ci * h * w..(b + 1) * ci * h * w]);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap(), true).unwrap()
    }

    #[test]
    fn identity_kernel_returns_input() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let k = leaf(&mut tape, &[1, 1, 1, 1], vec![1.0]);
        let b = leaf(&mut tape, &[1], vec![0.0]);
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn all_ones_sums_window() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 3, 3], vec![1.0; 9]);
        let k = leaf(&mut tape, &[1, 1, 3, 3], vec![1.0; 9]);
        let b = leaf(&mut tape, &[1], vec![0.0]);
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn padded_strided_shape() {
        // 8 -> floor((8 + 2 - 3) / 2) + 1 = 4
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 3, 8, 8], vec![0.5; 384]);
        let k = leaf(&mut tape, &[4, 3, 3, 3], vec![0.1; 108]);
        let b = leaf(&mut tape, &[4], vec![0.0; 4]);
        let y = tape.conv2d(x, k, b, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 4, 4]);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2, 4, 4], vec![0.0; 32]);
        let k = leaf(&mut tape, &[1, 3, 3, 3], vec![0.0; 27]);
        let b = leaf(&mut tape, &[1], vec![0.0]);
        let err = tape.conv2d(x, k, b, 1, 0).unwrap_err();
        assert!(err.to_string().contains("C_in"), "{err}");
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 2, 2], vec![0.0; 4]);
        let k = leaf(&mut tape, &[1, 1, 5, 5], vec![0.0; 25]);
        let b = leaf(&mut tape, &[1], vec![0.0]);
        let err = tape.conv2d(x, k, b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn valid_range_matches_bruteforce() {
        for k in 0..7 {
            for p in 0..4 {
                for s in 1..4 {
                    for len in 1..10 {
                        if k >= len + 2 * p {
                            continue;
                        }
                        let out = (len + 2 * p - k) / s + 1;
                        let brute: Vec<usize> = (0..out)
                            .filter(|o| {
                                let i = (o * s + k) as isize - p as isize;
                                i >= 0 && (i as usize) < len
                            })
                            .collect();
                        let (lo, hi) = valid_range(k, p, s, len, out);
                        assert_eq!((lo..hi).collect::<Vec<_>>(), brute, "k={k} p={p} s={s} len={len}");
                    }
                }
            }
        }
    }
}

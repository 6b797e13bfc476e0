use super::conv::conv_out_len;
use super::tape::{Grads, Op, Var};
use super::{lit, Real, Result, Tape, Tensor, TensorError};

fn pool_dims(op: &'static str, shape: &[usize], window: usize, stride: usize, padding: usize) -> Result<[usize; 6]> {
    let &[n, c, h, w] = shape else {
        return Err(TensorError::ShapeMismatch { op, detail: format!("input must be [N,C,H,W], got {shape:?}") });
    };
    if padding >= window {
        return Err(TensorError::InvalidArgument {
            op,
            detail: format!("padding {padding} must be smaller than window {window}"),
        });
    }
    let oh = conv_out_len(op, h, window, stride, padding)?;
    let ow = conv_out_len(op, w, window, stride, padding)?;
    Ok([n, c, h, w, oh, ow])
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(T::zero())).collect())?;
        self.push("relu", out, Op::Relu { input }, &[input])
    }

    /// Max pooling with implicit `-inf` padding; ties resolve to the first
    /// row-major index in the window.
    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        self.check_live()?;
        let (out, argmax) = max_pool_forward(self.value(input), window, stride, padding)?;
        self.push("max_pool2d", out, Op::MaxPool { input, argmax }, &[input])
    }

    /// Average pooling; padded cells count as zeros in the divisor.
    pub fn avg_pool2d(&mut self, input: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        self.check_live()?;
        let out = avg_pool_forward(self.value(input), window, stride, padding)?;
        self.push("avg_pool2d", out, Op::AvgPool { input, window, stride, padding }, &[input])
    }
}

pub(crate) fn max_pool_forward<T: Real>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w, oh, ow] = pool_dims("max_pool2d", x.shape(), window, stride, padding)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for r in 0..oh {
            for q in 0..ow {
                let mut best = T::neg_infinity();
                let mut at = usize::MAX;
                for i in 0..window {
                    let ir = (r * stride + i) as isize - padding as isize;
                    if ir < 0 || ir as usize >= h {
                        continue;
                    }
                    for j in 0..window {
                        let jc = (q * stride + j) as isize - padding as isize;
                        if jc < 0 || jc as usize >= w {
                            continue;
                        }
                        let idx = base + ir as usize * w + jc as usize;
                        if at == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            at = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub(crate) fn avg_pool_forward<T: Real>(x: &Tensor<T>, window: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let [n, c, h, w, oh, ow] = pool_dims("avg_pool2d", x.shape(), window, stride, padding)?;
    let xd = x.data();
    let inv = T::one() / lit::<T>((window * window) as f64);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for r in 0..oh {
            for q in 0..ow {
                let mut acc = T::zero();
                for_window(r, q, window, stride, padding, h, w, |ir, jc| acc = acc + xd[base + ir * w + jc]);
                out.push(acc * inv);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

#[allow(clippy::too_many_arguments)]
fn for_window(
    r: usize,
    q: usize,
    window: usize,
    stride: usize,
    padding: usize,
    h: usize,
    w: usize,
    mut f: impl FnMut(usize, usize),
) {
    for i in 0..window {
        let ir = (r * stride + i) as isize - padding as isize;
        if ir < 0 || ir as usize >= h {
            continue;
        }
        for j in 0..window {
            let jc = (q * stride + j) as isize - padding as isize;
            if jc >= 0 && (jc as usize) < w {
                f(ir as usize, jc as usize);
            }
        }
    }
}

pub(crate) fn avg_pool_backward<T: Real>(
    input: Var,
    shape: &[usize],
    window: usize,
    stride: usize,
    padding: usize,
    gout: &[T],
    grads: &mut Grads<'_, T>,
) {
    let [n, c, h, w, oh, ow] = pool_dims("avg_pool2d", shape, window, stride, padding).expect("validated in forward");
    let inv = T::one() / lit::<T>((window * window) as f64);
    grads.acc(input, |gx| {
        for plane in 0..n * c {
            let base = plane * h * w;
            for r in 0..oh {
                for q in 0..ow {
                    let g = gout[(plane * oh + r) * ow + q] * inv;
                    for_window(r, q, window, stride, padding, h, w, |ir, jc| {
                        gx[base + ir * w + jc] = gx[base + ir * w + jc] + g;
                    });
                }
            }
        }
    });
}

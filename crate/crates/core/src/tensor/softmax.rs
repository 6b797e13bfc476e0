use super::tape::{Grads, Op, Var};
use super::{Real, Result, Tape, Tensor, TensorError};

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    /// Softmax over `axis`, independently for every slice along the other axes.
    pub fn softmax_along(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check_live()?;
        let out = softmax_forward(self.value(input), axis)?;
        self.push("softmax_along", out, Op::Softmax { input, axis }, &[input])
    }
}

pub(crate) fn softmax_forward<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange { op: "softmax_along", axis, rank: x.rank() });
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..len {
                let e = (xd[at(k)] - max).exp();
                out[at(k)] = e;
                total = total + e;
            }
            for k in 0..len {
                out[at(k)] = out[at(k)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_backward<T: Real>(input: Var, y: &Tensor<T>, axis: usize, gout: &[T], grads: &mut Grads<'_, T>) {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let yd = y.data();
    grads.acc(input, |gx| {
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let dot = (0..len).fold(T::zero(), |acc, k| acc + gout[at(k)] * yd[at(k)]);
                for k in 0..len {
                    gx[at(k)] = gx[at(k)] + yd[at(k)] * (gout[at(k)] - dot);
                }
            }
        }
    });
}

use super::tape::{Grads, Op, Var};
use super::{lit, strides, Real, Result, Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceMode {
    Mean,
    Sum,
}

impl<T: Real> Tape<T> {
    /// Sums or averages over `axes`, removing them from the shape.
    /// Global average pooling is `reduce(x, &[2, 3], Mean)` on `[N, C, H, W]`.
    pub fn reduce(&mut self, input: Var, axes: &[usize], mode: ReduceMode) -> Result<Var> {
        self.check_live()?;
        let out = reduce_forward(self.value(input), axes, mode)?;
        self.push("reduce", out, Op::Reduce { input, axes: axes.to_vec(), mode }, &[input])
    }
}

fn validate(shape: &[usize], axes: &[usize]) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() {
            return Err(TensorError::AxisOutOfRange { op: "reduce", axis: a, rank: shape.len() });
        }
        if axes[..i].contains(&a) {
            return Err(TensorError::InvalidArgument { op: "reduce", detail: format!("axis {a} listed twice") });
        }
    }
    Ok(())
}

/// For each input flat index, the flat index of the output cell it reduces into.
fn output_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = (0..shape.len()).filter(|d| !axes.contains(d)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&d| shape[d]).collect();
    let out_strides = strides(&out_shape);
    // stride of each input dim in output space (0 for reduced dims)
    let mut dim_stride = vec![0; shape.len()];
    for (k, &d) in kept.iter().enumerate() {
        dim_stride[d] = out_strides[k];
    }
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    let mut flat = 0usize;
    for _ in 0..numel {
        map.push(flat);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            flat += dim_stride[d];
            if idx[d] < shape[d] {
                break;
            }
            flat -= dim_stride[d] * shape[d];
            idx[d] = 0;
        }
    }
    (map, out_shape)
}

fn reduced_count(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}

pub(crate) fn reduce_forward<T: Real>(x: &Tensor<T>, axes: &[usize], mode: ReduceMode) -> Result<Tensor<T>> {
    validate(x.shape(), axes)?;
    if x.is_empty() {
        return Err(TensorError::EmptyReduction { op: "reduce" });
    }
    let (map, out_shape) = output_map(x.shape(), axes);
    let mut out = vec![T::zero(); out_shape.iter().product()];
    for (&o, &v) in map.iter().zip(x.data()) {
        out[o] = out[o] + v;
    }
    if mode == ReduceMode::Mean {
        let inv = T::one() / lit::<T>(reduced_count(x.shape(), axes) as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn reduce_backward<T: Real>(
    input: Var,
    in_shape: &[usize],
    axes: &[usize],
    mode: ReduceMode,
    gout: &[T],
    grads: &mut Grads<'_, T>,
) {
    let (map, _) = output_map(in_shape, axes);
    let scale = match mode {
        ReduceMode::Sum => T::one(),
        ReduceMode::Mean => T::one() / lit::<T>(reduced_count(in_shape, axes) as f64),
    };
    grads.acc(input, |gx| {
        for (g, &o) in gx.iter_mut().zip(&map) {
            *g = *g + gout[o] * scale;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn mean_over_everything() {
        let out = reduce_forward(&t(&[2, 2], &[1.0, 3.0, 5.0, 7.0]), &[0, 1], ReduceMode::Mean).unwrap();
        assert_eq!(out.shape(), &[] as &[usize]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn sum_over_rows() {
        let out = reduce_forward(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), &[0], ReduceMode::Sum).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn gap_keeps_batch_and_channels() {
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64);
        let out = reduce_forward(&x, &[2, 3], ReduceMode::Mean).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.data()[0], 1.5);
        assert_eq!(out.data()[5], 21.5);
    }

    #[test]
    fn bad_axes() {
        let x = Tensor::<f64>::zeros(&[2, 2]);
        assert!(reduce_forward(&x, &[2], ReduceMode::Sum).is_err());
        assert!(reduce_forward(&x, &[1, 1], ReduceMode::Sum).is_err());
        let empty = Tensor::<f64>::zeros(&[0, 2]);
        assert_eq!(reduce_forward(&empty, &[0], ReduceMode::Mean), Err(TensorError::EmptyReduction { op: "reduce" }));
    }
}

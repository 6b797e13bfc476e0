use super::tape::{Grads, Op, Var};
use super::{Real, Result, Tape, Tensor, TensorError};

impl<T: Real> Tape<T> {
    /// Row-wise affine map `x W^T + b` for `x: [N, F_in]`, `W: [F_out, F_in]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let out = linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        self.push("linear", out, Op::Linear { input, weight, bias }, &[input, weight, bias])
    }
}

pub(crate) fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "linear";
    let &[n, fin] = x.shape() else {
        return Err(TensorError::ShapeMismatch { op: OP, detail: format!("input must be [N,F_in], got {:?}", x.shape()) });
    };
    let &[fout, wfin] = w.shape() else {
        return Err(TensorError::ShapeMismatch { op: OP, detail: format!("weight must be [F_out,F_in], got {:?}", w.shape()) });
    };
    if wfin != fin {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("input has F_in = {fin} but weight expects {wfin}"),
        });
    }
    if b.shape() != [fout] {
        return Err(TensorError::ShapeMismatch { op: OP, detail: format!("bias must be [{fout}], got {:?}", b.shape()) });
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = Vec::with_capacity(n * fout);
    for r in 0..n {
        let row = &xd[r * fin..(r + 1) * fin];
        for o in 0..fout {
            let wrow = &wd[o * fin..(o + 1) * fin];
            let dot = row.iter().zip(wrow).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            out.push(dot + bd[o]);
        }
    }
    Tensor::new(vec![n, fout], out)
}

pub(crate) fn linear_backward<T: Real>(
    (input, x): (Var, &Tensor<T>),
    (weight, w): (Var, &Tensor<T>),
    bias: Var,
    gout: &[T],
    grads: &mut Grads<'_, T>,
) {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let (xd, wd) = (x.data(), w.data());
    grads.acc(input, |gx| {
        for r in 0..n {
            for o in 0..fout {
                let g = gout[r * fout + o];
                for i in 0..fin {
                    gx[r * fin + i] = gx[r * fin + i] + g * wd[o * fin + i];
                }
            }
        }
    });
    grads.acc(weight, |gw| {
        for r in 0..n {
            for o in 0..fout {
                let g = gout[r * fout + o];
                for i in 0..fin {
                    gw[o * fin + i] = gw[o * fin + i] + g * xd[r * fin + i];
                }
            }
        }
    });
    grads.acc(bias, |gb| {
        for r in 0..n {
            for o in 0..fout {
                gb[o] = gb[o] + gout[r * fout + o];
            }
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
    fn hand_arithmetic() {
        let out = linear_forward(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 2], &[3.0, 4.0]), &t(&[1], &[5.0])).unwrap();
        assert_eq!(out.data(), &[16.0]);
    }

    #[test]
    fn identity_weight() {
        let x = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]);
        let eye = Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let out = linear_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let err = linear_forward(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 3], &[1.0; 3]), &t(&[1], &[0.0])).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }
}

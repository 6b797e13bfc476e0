use super::{Result, Tape, Tensor, TensorError, Var};

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns the worst coordinate's
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
///
/// `f` records its computation on the supplied tape, starting from the input
/// handle, and must return a scalar.
pub fn finite_diff_check<F, E>(f: F, input: &Tensor<f64>, epsilon: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(TensorError::InvalidArgument {
            op: "finite_diff_check",
            detail: format!("epsilon {epsilon} outside [1e-7, 1e-3]"),
        }
        .into());
    }
    let eval = |x: Tensor<f64>| -> Result<f64, E> {
        let mut tape = Tape::new();
        let v = tape.constant(x)?;
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if value.len() != 1 {
            return Err(TensorError::NotScalar(value.shape().to_vec()).into());
        }
        Ok(value.data()[0])
    };

    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), true)?;
    let out = f(&mut tape, x)?;
    let base = tape.value(out).data().first().copied();
    tape.backward(out)?;
    let analytic = tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);

    let again = eval(input.clone())?;
    if base.map(f64::to_bits) != Some(again.to_bits()) {
        return Err(TensorError::NonDeterministic.into());
    }

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = input.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = input.clone();
        minus.data_mut()[i] -= epsilon;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::super::{BinaryMode, ReduceMode};
    use super::*;

    #[test]
    fn identity_sum_is_exact() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.3 - 0.7);
        let err = finite_diff_check(|t, v| t.reduce(v, &[0], ReduceMode::Sum), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn softmax_square_sum() {
        let x = Tensor::from_fn(&[3, 4], |i| ((i * 5) % 7) as f64 * 0.4 - 1.0);
        let err = finite_diff_check(
            |t, v| {
                let s = t.softmax_along(v, 1)?;
                let sq = t.elementwise(s, s, BinaryMode::Mul)?;
                t.reduce(sq, &[0, 1], ReduceMode::Sum)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_nondeterminism() {
        let calls = Cell::new(0u32);
        let x = Tensor::from_fn(&[2], |i| i as f64);
        let err = finite_diff_check(
            |t, v| {
                calls.set(calls.get() + 1);
                let bump = t.constant(Tensor::full(&[2], calls.get() as f64))?;
                let y = t.elementwise(v, bump, BinaryMode::Add)?;
                t.reduce(y, &[0], ReduceMode::Sum)
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert_eq!(err, TensorError::NonDeterministic);
    }

    #[test]
    fn epsilon_bounds() {
        let x = Tensor::from_fn(&[2], |i| i as f64);
        let f = |t: &mut Tape<f64>, v: Var| t.reduce(v, &[0], ReduceMode::Sum);
        assert!(finite_diff_check(f, &x, 1e-2).is_err());
        assert!(finite_diff_check(f, &x, 1e-9).is_err());
    }
}

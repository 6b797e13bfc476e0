use super::tape::{Grads, Op, Var};
use super::{lit, Real, Result, Tape, Tensor, TensorError};

impl<T: Real> Tape<T> {
    /// Mean Huber loss between two `[N]` vectors.
    pub fn huber_loss(&mut self, pred: Var, target: Var, delta: T) -> Result<Var> {
        self.check_live()?;
        let loss = huber_forward(self.value(pred), self.value(target), delta)?;
        self.push("huber_loss", Tensor::scalar(loss), Op::Huber { pred, target, delta }, &[pred, target])
    }
}

pub(crate) fn huber_forward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, delta: T) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(TensorError::InvalidArgument { op: "huber_loss", detail: format!("delta must be positive, got {delta}") });
    }
    if pred.rank() != 1 || pred.shape() != target.shape() || pred.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "huber_loss",
            detail: format!("pred {:?} and target {:?} must be equal non-empty vectors", pred.shape(), target.shape()),
        });
    }
    let half = lit::<T>(0.5);
    let total = pred.data().iter().zip(target.data()).fold(T::zero(), |acc, (&p, &t)| {
        let e = (p - t).abs();
        acc + if e <= delta { half * e * e } else { delta * (e - half * delta) }
    });
    Ok(total / lit::<T>(pred.len() as f64))
}

pub(crate) fn huber_backward<T: Real>(
    (pv, pred): (Var, &Tensor<T>),
    (tv, target): (Var, &Tensor<T>),
    delta: T,
    gout: T,
    grads: &mut Grads<'_, T>,
) {
    let scale = gout / lit::<T>(pred.len() as f64);
    let de: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let e = p - t;
            let d = if e.abs() <= delta { e } else { delta * e.signum() };
            d * scale
        })
        .collect();
    grads.acc(pv, |g| g.iter_mut().zip(&de).for_each(|(g, &d)| *g = *g + d));
    grads.acc(tv, |g| g.iter_mut().zip(&de).for_each(|(g, &d)| *g = *g - d));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn zero_when_equal() {
        assert_eq!(huber_forward(&v(&[0.3, 0.9]), &v(&[0.3, 0.9]), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_branch_closed_form() {
        // e = 2 delta, delta = 1: 1 * (2 - 0.5) = 1.5
        assert_eq!(huber_forward(&v(&[2.0]), &v(&[0.0]), 1.0).unwrap(), 1.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(huber_forward(&v(&[1.0]), &v(&[1.0, 2.0]), 1.0).is_err());
        assert!(huber_forward(&v(&[1.0]), &v(&[1.0]), 0.0).is_err());
        assert!(huber_forward(&v(&[1.0]), &v(&[1.0]), -1.0).is_err());
    }
}

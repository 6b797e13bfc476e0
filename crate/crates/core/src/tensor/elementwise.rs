use super::tape::{Grads, Op, Var};
use super::{strides, Real, Result, Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryMode {
    Add,
    Mul,
}

impl<T: Real> Tape<T> {
    /// Pointwise `a + b` or `a * b`. `b` may be broadcast to `a`'s shape by
    /// singleton expansion (trailing-aligned; missing or size-1 dims stretch).
    pub fn elementwise(&mut self, a: Var, b: Var, mode: BinaryMode) -> Result<Var> {
        self.check_live()?;
        let out = binary_forward(self.value(a), self.value(b), mode)?;
        self.push("elementwise", out, Op::Binary { a, b, mode }, &[a, b])
    }
}

/// Flat index into `b` for every flat index of `a`, or `None` when the
/// shapes are identical.
fn broadcast_map(a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    if a == b {
        return Ok(None);
    }
    if b.len() > a.len() {
        return Err(TensorError::ShapeMismatch {
            op: "elementwise",
            detail: format!("{b:?} has higher rank than {a:?}"),
        });
    }
    let lead = a.len() - b.len();
    let bstr = strides(b);
    let mut eff = vec![0usize; a.len()];
    for (k, (&bd, &bs)) in b.iter().zip(&bstr).enumerate() {
        let ad = a[lead + k];
        if bd == ad {
            eff[lead + k] = bs;
        } else if bd != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "elementwise",
                detail: format!("dimension {} of {b:?} cannot broadcast to {a:?}", k),
            });
        }
    }
    let numel: usize = a.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; a.len()];
    let mut flat = 0usize;
    for _ in 0..numel {
        map.push(flat);
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            flat += eff[d];
            if idx[d] < a[d] {
                break;
            }
            flat -= eff[d] * a[d];
            idx[d] = 0;
        }
    }
    Ok(Some(map))
}

fn apply<T: Real>(mode: BinaryMode, x: T, y: T) -> T {
    match mode {
        BinaryMode::Add => x + y,
        BinaryMode::Mul => x * y,
    }
}

pub(crate) fn binary_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, mode: BinaryMode) -> Result<Tensor<T>> {
    let out = match broadcast_map(a.shape(), b.shape())? {
        None => a.data().iter().zip(b.data()).map(|(&x, &y)| apply(mode, x, y)).collect(),
        Some(map) => a.data().iter().zip(&map).map(|(&x, &j)| apply(mode, x, b.data()[j])).collect(),
    };
    Tensor::new(a.shape().to_vec(), out)
}

pub(crate) fn binary_backward<T: Real>(
    (av, a): (Var, &Tensor<T>),
    (bv, b): (Var, &Tensor<T>),
    mode: BinaryMode,
    gout: &[T],
    grads: &mut Grads<'_, T>,
) {
    let map = broadcast_map(a.shape(), b.shape()).expect("validated in forward");
    let bidx = |i: usize| map.as_ref().map_or(i, |m| m[i]);
    grads.acc(av, |ga| {
        for (i, g) in ga.iter_mut().enumerate() {
            let d = match mode {
                BinaryMode::Add => gout[i],
                BinaryMode::Mul => gout[i] * b.data()[bidx(i)],
            };
            *g = *g + d;
        }
    });
    grads.acc(bv, |gb| {
        for i in 0..gout.len() {
            let d = match mode {
                BinaryMode::Add => gout[i],
                BinaryMode::Mul => gout[i] * a.data()[i],
            };
            let j = bidx(i);
            gb[j] = gb[j] + d;
        }
    });
}

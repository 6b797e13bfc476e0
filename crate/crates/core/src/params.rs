//! Named parameter tensors and their binding onto a tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Result, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self { name: name.into(), value }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Zero-mean normal initialization with the given standard deviation.
    pub fn normal(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)).unwrap());
        Self::new(name, value)
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param { name: self.name.clone(), value: self.value.cast() }
    }
}

/// Total number of scalars in `params`.
pub fn count<T: Real>(params: &[Param<T>]) -> usize {
    params.iter().map(|p| p.value.len()).sum()
}

/// Records every parameter as a gradient-requiring leaf.
pub fn bind<T: Real>(tape: &mut Tape<T>, params: &[Param<T>]) -> Result<Vec<Var>> {
    params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect()
}

/// Records every parameter as a constant (inference).
pub fn bind_frozen<T: Real>(tape: &mut Tape<T>, params: &[Param<T>]) -> Result<Vec<Var>> {
    params.iter().map(|p| tape.constant(p.value.clone())).collect()
}

/// Carves parameters out of one flat vector already on the tape, so a single
/// input handle drives every parameter (used for whole-model gradient checks).
pub fn bind_flat<T: Real>(tape: &mut Tape<T>, flat: Var, params: &[Param<T>]) -> Result<Vec<Var>> {
    let mut offset = 0;
    params
        .iter()
        .map(|p| {
            let n = p.value.len();
            let part = tape.narrow(flat, offset, n)?;
            offset += n;
            tape.reshape(part, p.value.shape())
        })
        .collect()
}

/// Concatenates all parameter values into one vector.
pub fn flatten<T: Real>(params: &[Param<T>]) -> Tensor<T> {
    let data: Vec<T> = params.iter().flat_map(|p| p.value.data().iter().copied()).collect();
    let n = data.len();
    Tensor::new(vec![n], data).expect("flat length")
}

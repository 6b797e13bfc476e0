use super::elementwise::BinaryMode;
use super::reduce::ReduceMode;
use super::ssim::SsimConstants;
use super::{ensure_finite, Real, Result, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, stride: usize, padding: usize },
    Linear { input: Var, weight: Var, bias: Var },
    Softmax { input: Var, axis: usize },
    Reduce { input: Var, axes: Vec<usize>, mode: ReduceMode },
    Binary { a: Var, b: Var, mode: BinaryMode },
    Relu { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, window: usize, stride: usize, padding: usize },
    Huber { pred: Var, target: Var, delta: T },
    Reshape { input: Var },
    Narrow { input: Var, start: usize },
    Concat { inputs: Vec<Var> },
    ChannelSsim { x: Var, y: Var, k: SsimConstants },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Gradient accumulators, one optional buffer per node.
pub(crate) struct Grads<'a, T> {
    nodes: &'a [Node<T>],
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<'_, T> {
    /// Runs `f` on the gradient buffer of `v`, allocating it zeroed on first
    /// use. Nodes that do not require gradients are skipped.
    pub(crate) fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = self.slots[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
        f(slot);
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

/// Linear record of executed operations.
///
/// A tape supports exactly one backward pass; afterwards it is spent and
/// rejects further recording or differentiation.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    spent: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), spent: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_spent(&self) -> bool {
        self.spent
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.spent {
            return Err(TensorError::TapeSpent);
        }
        ensure_finite("leaf", value.data())?;
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if `v`
    /// requires gradients and was reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grad(v)?;
        Some(Tensor { shape: self.shape(v).to_vec(), data: g.to_vec() })
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.spent {
            return Err(TensorError::TapeSpent);
        }
        ensure_finite(op_name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn check_live(&self) -> Result<()> {
        if self.spent {
            Err(TensorError::TapeSpent)
        } else {
            Ok(())
        }
    }

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.spent {
            return Err(TensorError::TapeSpent);
        }
        let value = &self.nodes[loss.0].value;
        if value.len() != 1 {
            return Err(TensorError::NotScalar(value.shape().to_vec()));
        }
        self.spent = true;
        let mut grads = Grads { nodes: &self.nodes, slots: (0..self.nodes.len()).map(|_| None).collect() };
        grads.acc(loss, |g| g[0] = T::one());

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads.slots[idx].take() else { continue };
            let node = &self.nodes[idx];
            backward_node(&self.nodes, node, &gout, &mut grads);
            grads.slots[idx] = Some(gout);
        }
        self.grads = grads.slots;
        Ok(())
    }
}

fn backward_node<T: Real>(nodes: &[Node<T>], node: &Node<T>, gout: &[T], grads: &mut Grads<'_, T>) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { input, kernel, bias, stride, padding } => {
            super::conv::conv2d_backward(
                (*input, val(*input)),
                (*kernel, val(*kernel)),
                *bias,
                *stride,
                *padding,
                node.value.shape(),
                gout,
                grads,
            );
        }
        Op::Linear { input, weight, bias } => {
            super::linear::linear_backward((*input, val(*input)), (*weight, val(*weight)), *bias, gout, grads);
        }
        Op::Softmax { input, axis } => {
            super::softmax::softmax_backward(*input, &node.value, *axis, gout, grads);
        }
        Op::Reduce { input, axes, mode } => {
            super::reduce::reduce_backward(*input, val(*input).shape(), axes, *mode, gout, grads);
        }
        Op::Binary { a, b, mode } => {
            super::elementwise::binary_backward((*a, val(*a)), (*b, val(*b)), *mode, gout, grads);
        }
        Op::Relu { input } => {
            let x = val(*input).data();
            grads.acc(*input, |g| {
                for ((g, &x), &go) in g.iter_mut().zip(x).zip(gout) {
                    if x > T::zero() {
                        *g = *g + go;
                    }
                }
            });
        }
        Op::MaxPool { input, argmax } => {
            grads.acc(*input, |g| {
                for (&src, &go) in argmax.iter().zip(gout) {
                    g[src] = g[src] + go;
                }
            });
        }
        Op::AvgPool { input, window, stride, padding } => {
            super::pool::avg_pool_backward(*input, val(*input).shape(), *window, *stride, *padding, gout, grads);
        }
        Op::Huber { pred, target, delta } => {
            super::loss::huber_backward((*pred, val(*pred)), (*target, val(*target)), *delta, gout[0], grads);
        }
        Op::Reshape { input } => {
            grads.acc(*input, |g| {
                for (g, &go) in g.iter_mut().zip(gout) {
                    *g = *g + go;
                }
            });
        }
        Op::Narrow { input, start } => {
            let row: usize = val(*input).shape()[1..].iter().product();
            let offset = start * row;
            grads.acc(*input, |g| {
                for (g, &go) in g[offset..offset + gout.len()].iter_mut().zip(gout) {
                    *g = *g + go;
                }
            });
        }
        Op::Concat { inputs } => {
            let mut offset = 0;
            for v in inputs {
                let n = val(*v).len();
                let part = &gout[offset..offset + n];
                grads.acc(*v, |g| {
                    for (g, &go) in g.iter_mut().zip(part) {
                        *g = *g + go;
                    }
                });
                offset += n;
            }
        }
        Op::ChannelSsim { x, y, k } => {
            super::ssim::channel_ssim_backward((*x, val(*x)), (*y, val(*y)), *k, gout, grads);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 5.0]), true).unwrap();
        let s = tape.reduce(x, &[0], ReduceMode::Sum).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_x() {
        let mut tape = Tape::new();
        let xs = [1.5, -2.0, 0.25, 3.0];
        let x = tape.leaf(t(&[2, 2], &xs), true).unwrap();
        let sq = tape.elementwise(x, x, BinaryMode::Mul).unwrap();
        let s = tape.reduce(sq, &[0, 1], ReduceMode::Sum).unwrap();
        tape.backward(s).unwrap();
        let expect: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.grad(x).unwrap(), expect.as_slice());
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[2.0]), true).unwrap();
        let s = tape.reduce(x, &[0], ReduceMode::Sum).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(TensorError::TapeSpent));
        assert!(tape.relu(x).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
        let c = tape.constant(t(&[2], &[3.0, 4.0])).unwrap();
        let p = tape.elementwise(x, c, BinaryMode::Mul).unwrap();
        let s = tape.reduce(p, &[0], ReduceMode::Sum).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn reuse_accumulates_exactly() {
        let xs = [0.3, -1.7, 2.9];
        let single = |scale: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[3], &xs), true).unwrap();
            let w = tape.constant(t(&[3], &[scale, scale, scale])).unwrap();
            let p = tape.elementwise(x, w, BinaryMode::Mul).unwrap();
            let s = tape.reduce(p, &[0], ReduceMode::Sum).unwrap();
            tape.backward(s).unwrap();
            tape.grad(x).unwrap().to_vec()
        };
        let g1 = single(2.0);
        let g2 = single(-0.5);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &xs), true).unwrap();
        let w1 = tape.constant(t(&[3], &[2.0; 3])).unwrap();
        let w2 = tape.constant(t(&[3], &[-0.5; 3])).unwrap();
        let a = tape.elementwise(x, w1, BinaryMode::Mul).unwrap();
        let b = tape.elementwise(x, w2, BinaryMode::Mul).unwrap();
        let sa = tape.reduce(a, &[0], ReduceMode::Sum).unwrap();
        let sb = tape.reduce(b, &[0], ReduceMode::Sum).unwrap();
        let s = tape.elementwise(sa, sb, BinaryMode::Add).unwrap();
        tape.backward(s).unwrap();
        let both: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        assert_eq!(tape.grad(x).unwrap(), both.as_slice());
    }

    #[test]
    fn non_finite_leaf_is_rejected() {
        let mut tape = Tape::<f64>::new();
        assert!(matches!(tape.leaf(t(&[1], &[f64::NAN]), false), Err(TensorError::NonFinite { .. })));
    }
}

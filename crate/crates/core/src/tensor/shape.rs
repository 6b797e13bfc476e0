use super::tape::{Op, Var};
use super::{concat_shape, narrow_check, Real, Result, Tape, Tensor};

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        self.check_live()?;
        let out = self.value(input).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape { input }, &[input])
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        self.check_live()?;
        narrow_check("narrow", self.shape(input), start, len)?;
        let out = self.value(input).narrow(start, len)?;
        self.push("narrow", out, Op::Narrow { input, start }, &[input])
    }

    /// Row `index` of the leading axis, with that axis dropped.
    pub fn select(&mut self, input: Var, index: usize) -> Result<Var> {
        let row = self.narrow(input, index, 1)?;
        let shape = self.shape(input)[1..].to_vec();
        self.reshape(row, &shape)
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        self.check_live()?;
        let shapes: Vec<&[usize]> = inputs.iter().map(|&v| self.shape(v)).collect();
        let shape = concat_shape(&shapes)?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for &v in inputs {
            data.extend_from_slice(self.value(v).data());
        }
        let out = Tensor::new(shape, data)?;
        self.push("concat", out, Op::Concat { inputs: inputs.to_vec() }, inputs)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let rows = inputs
            .iter()
            .map(|&v| {
                let mut shape = vec![1];
                shape.extend_from_slice(self.shape(v));
                self.reshape(v, &shape)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ReduceMode;
    use super::*;

    #[test]
    fn select_and_stack_round_trip() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_fn(&[3, 2, 2], |i| i as f64), true).unwrap();
        let rows: Vec<Var> = (0..3).map(|i| tape.select(x, i).unwrap()).collect();
        assert_eq!(tape.shape(rows[1]), &[2, 2]);
        assert_eq!(tape.value(rows[1]).data(), &[4.0, 5.0, 6.0, 7.0]);
        let back = tape.stack(&rows).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
    }

    #[test]
    fn narrow_gradient_lands_in_slice() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::from_fn(&[4], |i| i as f64), true).unwrap();
        let part = tape.narrow(x, 1, 2).unwrap();
        let s = tape.reduce(part, &[0], ReduceMode::Sum).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_rejects_mismatched_tails() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[1, 2])).unwrap();
        let b = tape.constant(Tensor::<f64>::zeros(&[1, 3])).unwrap();
        assert!(tape.concat(&[a, b]).is_err());
    }
}

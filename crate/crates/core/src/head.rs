//! Per-image aggregation against the pseudo-reference and the regression head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::Param;
use crate::tensor::{ReduceMode, Real, SsimConstants, Tape, Var};

/// How an image's feature maps are compared with the pseudo-reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Channel-wise SSIM, `C` features per stage.
    Ssim,
    /// Pooled features of the image followed by pooled pseudo-reference, `2C` per stage.
    Concat,
}

impl Aggregation {
    pub fn features_per_stage(self, channels: usize) -> usize {
        match self {
            Self::Ssim => channels,
            Self::Concat => 2 * channels,
        }
    }
}

/// `alpha_c = SSIM(z_i[c], z_bar[c])` over each `H x W` plane.
pub fn channel_ssim<T: Real>(tape: &mut Tape<T>, zi: Var, zbar: Var, k: SsimConstants) -> Result<Var> {
    Ok(tape.channel_ssim(zi, zbar, k)?)
}

/// `[GAP(z_i); GAP(z_bar)]` for `[C, H, W]` inputs.
pub fn concat_aggregation<T: Real>(tape: &mut Tape<T>, zi: Var, zbar: Var) -> Result<Var> {
    if tape.shape(zi) != tape.shape(zbar) || tape.shape(zi).len() != 3 {
        return Err(Error::Data(format!(
            "concat aggregation needs equal [C, H, W] maps, got {:?} and {:?}",
            tape.shape(zi),
            tape.shape(zbar)
        )));
    }
    let a = tape.reduce(zi, &[1, 2], ReduceMode::Mean)?;
    let b = tape.reduce(zbar, &[1, 2], ReduceMode::Mean)?;
    Ok(tape.concat(&[a, b])?)
}

pub fn aggregate<T: Real>(tape: &mut Tape<T>, mode: Aggregation, zi: Var, zbar: Var, k: SsimConstants) -> Result<Var> {
    match mode {
        Aggregation::Ssim => channel_ssim(tape, zi, zbar, k),
        Aggregation::Concat => concat_aggregation(tape, zi, zbar),
    }
}

/// Single affine layer mapping a feature vector to a score.
pub fn init_head<T: Real>(features: usize, rng: &mut impl Rng) -> Vec<Param<T>> {
    vec![
        Param::normal("head.weight", &[1, features], 0.1 / (features as f64).sqrt(), rng),
        Param::zeros("head.bias", &[1]),
    ]
}

/// Applies the head to `[M, F]` features, returning `[M]` scores.
pub fn regress<T: Real>(tape: &mut Tape<T>, vars: &[Var], features: Var) -> Result<Var> {
    let [weight, bias] = vars else {
        return Err(Error::Config(format!("regression head expects 2 parameters, got {}", vars.len())));
    };
    let out = tape.linear(features, *weight, *bias)?;
    let m = tape.shape(out)[0];
    Ok(tape.reshape(out, &[m])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn concat_of_ones() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[3, 2, 2], 1.0)).unwrap();
        let out = concat_aggregation(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0; 6]);
    }

    #[test]
    fn concat_halves_match_for_identical_maps() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[4, 3, 3], |i| (i as f64).cos())).unwrap();
        let out = concat_aggregation(&mut tape, a, a).unwrap();
        let v = tape.value(out).data();
        assert_eq!(&v[..4], &v[4..]);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 2, 2])).unwrap();
        let b = tape.constant(Tensor::zeros(&[3, 2, 2])).unwrap();
        assert!(concat_aggregation(&mut tape, a, b).is_err());
    }

    #[test]
    fn feature_counts() {
        assert_eq!(Aggregation::Ssim.features_per_stage(8), 8);
        assert_eq!(Aggregation::Concat.features_per_stage(8), 16);
    }
}

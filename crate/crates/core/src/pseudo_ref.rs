//! Pseudo-reference estimation: a softmax-weighted convex combination of the
//! feature maps of every image in a set.
//!
//! The weighting granularity is selected by [`PrVariant`]. Logits are computed
//! per image with parameters shared across the set, then normalized with a
//! softmax over the set axis, independently for each slice the variant
//! distinguishes (nothing, channels, locations, or both).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::FeatureStack;
use crate::error::{Error, Result};
use crate::params::Param;
use crate::tensor::{BinaryMode, ReduceMode, Real, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrVariant {
    /// (i) plain mean over the set.
    #[serde(rename = "mean")]
    Mean,
    /// (ii) one weight per image from a linear layer on pooled features.
    #[serde(rename = "scalar")]
    ScalarWeight,
    /// (iii) one weight per image and channel.
    #[serde(rename = "channel")]
    ChannelWeight,
    /// (iv) one weight per image and location from a single-kernel 1x1 conv.
    #[default]
    #[serde(rename = "location")]
    LocationWeight,
    /// (v) one weight per image, channel and location.
    #[serde(rename = "full")]
    FullWeight,
}

impl PrVariant {
    pub const ALL: [PrVariant; 5] =
        [Self::Mean, Self::ScalarWeight, Self::ChannelWeight, Self::LocationWeight, Self::FullWeight];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::ScalarWeight => "scalar",
            Self::ChannelWeight => "channel",
            Self::LocationWeight => "location",
            Self::FullWeight => "full",
        }
    }

    pub fn roman(self) -> &'static str {
        match self {
            Self::Mean => "i",
            Self::ScalarWeight => "ii",
            Self::ChannelWeight => "iii",
            Self::LocationWeight => "iv",
            Self::FullWeight => "v",
        }
    }

    /// Parameter shapes for a stage with `channels` channels.
    pub fn param_shapes(self, channels: usize) -> Vec<Vec<usize>> {
        let c = channels;
        match self {
            Self::Mean => vec![],
            Self::ScalarWeight => vec![vec![1, c], vec![1]],
            Self::ChannelWeight => vec![vec![c, c], vec![c]],
            Self::LocationWeight => vec![vec![1, c, 1, 1], vec![1]],
            Self::FullWeight => vec![vec![c, c, 1, 1], vec![c]],
        }
    }

    /// Freshly initialized parameters: small normal weights, zero bias.
    pub fn init_params<T: Real>(self, stage: usize, channels: usize, rng: &mut impl Rng) -> Vec<Param<T>> {
        let shapes = self.param_shapes(channels);
        if shapes.is_empty() {
            return Vec::new();
        }
        let std = 0.1 / (channels as f64).sqrt();
        vec![
            Param::normal(format!("pr{stage}.weight"), &shapes[0], std, rng),
            Param::zeros(format!("pr{stage}.bias"), &shapes[1]),
        ]
    }
}

impl fmt::Display for PrVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s || v.roman() == s)
            .ok_or_else(|| Error::Config(format!("unknown pseudo-reference variant {s:?}")))
    }
}

/// Attention weights of one stage. `data` is `None` for the mean variant
/// (implicit `1/N`); otherwise `[N]`, `[N, C]`, `[N, H, W]` or `[N, C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct WeightField {
    pub variant: PrVariant,
    pub data: Option<Var>,
}

fn check_params<T: Real>(tape: &Tape<T>, variant: PrVariant, vars: &[Var], channels: usize) -> Result<()> {
    let expect = variant.param_shapes(channels);
    if vars.len() != expect.len() {
        return Err(Error::Config(format!("{variant} expects {} parameters, got {}", expect.len(), vars.len())));
    }
    for (v, shape) in vars.iter().zip(&expect) {
        if tape.shape(*v) != shape.as_slice() {
            return Err(Error::Config(format!(
                "{variant} parameter shape {:?} does not match {shape:?} for {channels} channels",
                tape.shape(*v)
            )));
        }
    }
    Ok(())
}

fn stack_dims<T: Real>(tape: &Tape<T>, z: Var) -> Result<[usize; 4]> {
    match *tape.shape(z) {
        [n, c, h, w] if n > 0 => Ok([n, c, h, w]),
        ref s => Err(Error::Data(format!("feature stack must be [N>=1, C, H, W], got {s:?}"))),
    }
}

/// Attention weights for a feature stack.
pub fn compute_weights<T: Real>(tape: &mut Tape<T>, variant: PrVariant, vars: &[Var], z: &FeatureStack) -> Result<WeightField> {
    let [n, c, h, w] = stack_dims(tape, z.data)?;
    check_params(tape, variant, vars, c)?;
    let data = match variant {
        PrVariant::Mean => None,
        PrVariant::ScalarWeight | PrVariant::ChannelWeight => {
            let pooled = tape.reduce(z.data, &[2, 3], ReduceMode::Mean)?;
            let logits = tape.linear(pooled, vars[0], vars[1])?;
            let weights = tape.softmax_along(logits, 0)?;
            Some(if variant == PrVariant::ScalarWeight { tape.reshape(weights, &[n])? } else { weights })
        }
        PrVariant::LocationWeight => {
            let logits = tape.conv2d(z.data, vars[0], vars[1], 1, 0)?;
            let weights = tape.softmax_along(logits, 0)?;
            Some(tape.reshape(weights, &[n, h, w])?)
        }
        PrVariant::FullWeight => {
            let logits = tape.conv2d(z.data, vars[0], vars[1], 1, 0)?;
            Some(tape.softmax_along(logits, 0)?)
        }
    };
    Ok(WeightField { variant, data })
}

/// `z_bar = sum_i w_i * z_i` with the weights broadcast over the dimensions
/// they lack. Returns `[C, H, W]`.
pub fn pseudo_reference<T: Real>(tape: &mut Tape<T>, z: &FeatureStack, w: &WeightField) -> Result<Var> {
    let [n, c, h, wd] = stack_dims(tape, z.data)?;
    let Some(weights) = w.data else {
        return Ok(tape.reduce(z.data, &[0], ReduceMode::Mean)?);
    };
    let expect: Vec<usize> = match w.variant {
        PrVariant::Mean => unreachable!("mean carries no weight tensor"),
        PrVariant::ScalarWeight => vec![n],
        PrVariant::ChannelWeight => vec![n, c],
        PrVariant::LocationWeight => vec![n, h, wd],
        PrVariant::FullWeight => vec![n, c, h, wd],
    };
    if tape.shape(weights) != expect.as_slice() {
        return Err(Error::Data(format!(
            "{} weights have shape {:?}, expected {expect:?}",
            w.variant,
            tape.shape(weights)
        )));
    }
    let broadcast: [usize; 4] = match w.variant {
        PrVariant::ScalarWeight => [n, 1, 1, 1],
        PrVariant::ChannelWeight => [n, c, 1, 1],
        PrVariant::LocationWeight => [n, 1, h, wd],
        _ => [n, c, h, wd],
    };
    let wb = tape.reshape(weights, &broadcast)?;
    let weighted = tape.elementwise(z.data, wb, BinaryMode::Mul)?;
    Ok(tape.reduce(weighted, &[0], ReduceMode::Sum)?)
}

/// One pseudo-reference per stage, computed once from the whole set.
pub fn pseudo_reference_all_stages<T: Real>(
    tape: &mut Tape<T>,
    variant: PrVariant,
    stage_vars: &[&[Var]],
    stacks: &[FeatureStack],
) -> Result<Vec<Var>> {
    if stage_vars.len() != stacks.len() {
        return Err(Error::Config(format!("{} parameter groups for {} stages", stage_vars.len(), stacks.len())));
    }
    let n0 = stacks.first().map(|s| tape.shape(s.data)[0]);
    for s in stacks {
        if Some(tape.shape(s.data)[0]) != n0 {
            return Err(Error::Data(format!(
                "inconsistent set size across stages: stage {} has N = {}, stage 0 has {:?}",
                s.stage,
                tape.shape(s.data)[0],
                n0
            )));
        }
    }
    stacks
        .iter()
        .zip(stage_vars)
        .map(|(z, vars)| {
            let w = compute_weights(tape, variant, vars, z)?;
            pseudo_reference(tape, z, &w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::params;
    use crate::tensor::Tensor;

    fn stack(tape: &mut Tape<f64>, shape: [usize; 4], seed: u64) -> FeatureStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
        FeatureStack { stage: 0, data: tape.constant(t).unwrap() }
    }

    #[test]
    fn parse_names_and_numerals() {
        assert_eq!("iv".parse::<PrVariant>().unwrap(), PrVariant::LocationWeight);
        assert_eq!("full".parse::<PrVariant>().unwrap(), PrVariant::FullWeight);
        assert_eq!(PrVariant::default(), PrVariant::LocationWeight);
        assert!("vi".parse::<PrVariant>().is_err());
    }

    #[test]
    fn mean_of_two() {
        let mut tape = Tape::new();
        let z = stack(&mut tape, [2, 2, 2, 2], 1);
        let w = compute_weights(&mut tape, PrVariant::Mean, &[], &z).unwrap();
        let zbar = pseudo_reference(&mut tape, &z, &w).unwrap();
        let zv = tape.value(z.data).clone();
        for i in 0..8 {
            let expect = (zv.data()[i] + zv.data()[8 + i]) / 2.0;
            assert!((tape.value(zbar).data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn location_weights_sum_to_one_per_location() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = stack(&mut tape, [4, 3, 5, 5], 2);
        let p: Vec<Param<f64>> = PrVariant::LocationWeight.init_params(0, 3, &mut rng);
        let vars = params::bind_frozen(&mut tape, &p).unwrap();
        let w = compute_weights(&mut tape, PrVariant::LocationWeight, &vars, &z).unwrap();
        let wv = tape.value(w.data.unwrap());
        assert_eq!(wv.shape(), &[4, 5, 5]);
        for loc in 0..25 {
            let s: f64 = (0..4).map(|i| wv.data()[i * 25 + loc]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = stack(&mut tape, [2, 3, 2, 2], 2);
        let p: Vec<Param<f64>> = PrVariant::FullWeight.init_params(0, 4, &mut rng);
        let vars = params::bind_frozen(&mut tape, &p).unwrap();
        assert!(compute_weights(&mut tape, PrVariant::FullWeight, &vars, &z).is_err());
    }

    #[test]
    fn inconsistent_set_sizes_across_stages() {
        let mut tape = Tape::new();
        let a = stack(&mut tape, [3, 2, 4, 4], 1);
        let mut b = stack(&mut tape, [2, 2, 2, 2], 2);
        b.stage = 1;
        let err = pseudo_reference_all_stages(&mut tape, PrVariant::Mean, &[&[], &[]], &[a, b]).unwrap_err();
        assert!(err.to_string().contains("inconsistent"), "{err}");
    }
}

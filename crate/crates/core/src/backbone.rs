//! Residual convolutional pyramid with five tap points: the stem output and
//! the output of each of four stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, Param};
use crate::tensor::conv::conv_out_len;
use crate::tensor::{BinaryMode, Real, Tape, Var};

pub const NUM_TAPS: usize = 5;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_kernel: usize,
    /// Channels at each tap (stem, then stages 1-4).
    pub stage_channels: Vec<usize>,
    /// Residual blocks in stages 1-4.
    pub stage_blocks: Vec<usize>,
    /// Stride of the stem and of the first block of each stage.
    pub downsample_strides: Vec<usize>,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stem_kernel: 7,
            stage_channels: vec![8, 16, 32, 48, 64],
            stage_blocks: vec![1, 1, 1, 1],
            downsample_strides: vec![2, 2, 2, 2, 2],
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage_channels.len() != NUM_TAPS {
            return bad(format!("stage_channels needs {NUM_TAPS} entries, got {}", self.stage_channels.len()));
        }
        if self.stage_blocks.len() != NUM_TAPS - 1 {
            return bad(format!("stage_blocks needs {} entries, got {}", NUM_TAPS - 1, self.stage_blocks.len()));
        }
        if self.downsample_strides.len() != NUM_TAPS {
            return bad(format!("downsample_strides needs {NUM_TAPS} entries, got {}", self.downsample_strides.len()));
        }
        if self.stage_channels.contains(&0) {
            return bad("every stage needs at least one channel".into());
        }
        if self.stage_blocks.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.downsample_strides.iter().any(|&s| s < 2) {
            return bad("downsample strides must be >= 2 so tap resolution strictly decreases".into());
        }
        if self.stem_kernel == 0 {
            return bad("stem_kernel must be positive".into());
        }
        Ok(())
    }

    /// `(C, H, W)` at each tap for an `H x W` input.
    pub fn tap_shapes(&self, height: usize, width: usize) -> Result<Vec<(usize, usize, usize)>> {
        self.validate()?;
        let undersized = |e: crate::tensor::TensorError| {
            Error::Config(format!("input {height}x{width} is too small for the backbone strides: {e}"))
        };
        let pad = self.stem_kernel / 2;
        let s0 = self.downsample_strides[0];
        let mut h = conv_out_len("backbone", height, self.stem_kernel, s0, pad).map_err(undersized)?;
        let mut w = conv_out_len("backbone", width, self.stem_kernel, s0, pad).map_err(undersized)?;
        let mut shapes = vec![(self.stage_channels[0], h, w)];
        for stage in 1..NUM_TAPS {
            let s = self.downsample_strides[stage];
            h = conv_out_len("backbone", h, 3, s, 1).map_err(undersized)?;
            w = conv_out_len("backbone", w, 3, s, 1).map_err(undersized)?;
            let (_, ph, pw) = shapes[stage - 1];
            if h >= ph || w >= pw {
                return Err(Error::Config(format!(
                    "input {height}x{width} is too small: tap {stage} would not be smaller than tap {}",
                    stage - 1
                )));
            }
            shapes.push((self.stage_channels[stage], h, w));
        }
        Ok(shapes)
    }
}

/// One activation stack `[N, C, H, W]` at a tap point.
#[derive(Clone, Copy, Debug)]
pub struct FeatureStack {
    pub stage: usize,
    pub data: Var,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    proj: Option<Conv>,
}

#[derive(Clone, Debug)]
pub struct Backbone<T> {
    config: BackboneConfig,
    params: Vec<Param<T>>,
    stem: Conv,
    stages: Vec<Vec<Block>>,
}

struct Builder<'a, T> {
    params: Vec<Param<T>>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let weight = self.params.len();
        self.params.push(Param::normal(format!("{name}.weight"), &[cout, cin, k, k], (2.0 / fan_in).sqrt(), self.rng));
        self.params.push(Param::zeros(format!("{name}.bias"), &[cout]));
        Conv { weight, bias: weight + 1, stride, padding }
    }
}

impl<T: Real> Backbone<T> {
    /// Builds the network with He-normal weights drawn from `config.seed`.
    pub fn build(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder { params: Vec::new(), rng: &mut rng };
        let k = config.stem_kernel;
        let stem = b.conv("stem", IMAGE_CHANNELS, config.stage_channels[0], k, config.downsample_strides[0], k / 2);
        let mut stages = Vec::new();
        for s in 1..NUM_TAPS {
            let (cin, cout) = (config.stage_channels[s - 1], config.stage_channels[s]);
            let mut blocks = Vec::new();
            for i in 0..config.stage_blocks[s - 1] {
                let (bin, stride) = if i == 0 { (cin, config.downsample_strides[s]) } else { (cout, 1) };
                let name = format!("stage{s}.block{i}");
                let conv1 = b.conv(&format!("{name}.conv1"), bin, cout, 3, stride, 1);
                let conv2 = b.conv(&format!("{name}.conv2"), cout, cout, 3, 1, 1);
                let proj = (bin != cout || stride != 1).then(|| b.conv(&format!("{name}.proj"), bin, cout, 1, stride, 0));
                blocks.push(Block { conv1, conv2, proj });
            }
            stages.push(blocks);
        }
        Ok(Self { config: config.clone(), params: b.params, stem, stages })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        params::count(&self.params)
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.config.stage_channels.clone()
    }

    pub fn cast<U: Real>(&self) -> Backbone<U> {
        Backbone {
            config: self.config.clone(),
            params: self.params.iter().map(Param::cast).collect(),
            stem: self.stem.clone(),
            stages: self.stages.clone(),
        }
    }

    /// Maps an image set `[N, 3, H, W]` to the five tap activations. Every
    /// operation acts per image, so no information crosses the set axis.
    pub fn forward_set(&self, tape: &mut Tape<T>, vars: &[Var], images: Var) -> Result<Vec<FeatureStack>> {
        if vars.len() != self.params.len() {
            return Err(Error::Config(format!("backbone expects {} parameters, got {}", self.params.len(), vars.len())));
        }
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != IMAGE_CHANNELS || shape[0] == 0 {
            return Err(Error::Data(format!("images must be [N>=1, 3, H, W], got {shape:?}")));
        }
        self.config.tap_shapes(shape[2], shape[3])?;

        let conv = |tape: &mut Tape<T>, c: &Conv, x: Var| tape.conv2d(x, vars[c.weight], vars[c.bias], c.stride, c.padding);
        let stem = conv(tape, &self.stem, images)?;
        let mut x = tape.relu(stem)?;
        let mut taps = vec![FeatureStack { stage: 0, data: x }];
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                let h = conv(tape, &block.conv1, x)?;
                let h = tape.relu(h)?;
                let h = conv(tape, &block.conv2, h)?;
                let skip = match &block.proj {
                    Some(p) => conv(tape, p, x)?,
                    None => x,
                };
                let sum = tape.elementwise(h, skip, BinaryMode::Add)?;
                x = tape.relu(sum)?;
            }
            taps.push(FeatureStack { stage: s + 1, data: x });
        }
        Ok(taps)
    }
}

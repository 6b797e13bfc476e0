//! The full set-wise quality model: backbone, per-stage pseudo-references,
//! aggregation, regression head.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, FeatureStack, NUM_TAPS};
use crate::error::{Error, Result};
use crate::head::{self, Aggregation};
use crate::params::{self, Param};
use crate::pseudo_ref::{self, PrVariant};
use crate::tensor::{ReduceMode, Real, SsimConstants, Tape, Tensor, Var};

/// Architecture switches of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub pseudo_ref: bool,
    pub ssim: bool,
    pub pyramid: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self { pseudo_ref: true, ssim: true, pyramid: true }
    }
}

impl Toggles {
    pub const BASELINE: Toggles = Toggles { pseudo_ref: false, ssim: false, pyramid: false };

    /// Compact label, e.g. `pr1-ssim1-pyr0`.
    pub fn label(&self) -> String {
        format!("pr{}-ssim{}-pyr{}", self.pseudo_ref as u8, self.ssim as u8, self.pyramid as u8)
    }

    pub fn parse_label(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed toggle label {s:?}"));
        let parts: Vec<&str> = s.split('-').collect();
        let [pr, ssim, pyr] = parts.as_slice() else { return Err(bad()) };
        let flag = |p: &str, prefix: &str| match p.strip_prefix(prefix) {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            _ => Err(bad()),
        };
        Ok(Self { pseudo_ref: flag(pr, "pr")?, ssim: flag(ssim, "ssim")?, pyramid: flag(pyr, "pyr")? })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub variant: PrVariant,
    pub toggles: Toggles,
    pub ssim: SsimConstants,
}

impl ModelConfig {
    /// Pyramid stages whose features reach the head.
    pub fn used_stages(&self) -> Vec<usize> {
        if self.toggles.pseudo_ref && self.toggles.pyramid {
            (0..NUM_TAPS).collect()
        } else {
            vec![NUM_TAPS - 1]
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        if self.toggles.ssim {
            Aggregation::Ssim
        } else {
            Aggregation::Concat
        }
    }

    pub fn feature_len(&self) -> usize {
        let ch = &self.backbone.stage_channels;
        if !self.toggles.pseudo_ref {
            return ch[NUM_TAPS - 1];
        }
        let agg = self.aggregation();
        self.used_stages().iter().map(|&s| agg.features_per_stage(ch[s])).sum()
    }

    /// Every parameter's name and shape, in canonical order.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(PriqModel::<f32>::build(self)?.params().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect())
    }
}

/// Parameter handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub all: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct PriqModel<T> {
    config: ModelConfig,
    backbone: Backbone<T>,
    /// Pseudo-reference parameters followed by the head parameters.
    extra: Vec<Param<T>>,
    pr_ranges: Vec<Range<usize>>,
    head_range: Range<usize>,
}

impl<T: Real> PriqModel<T> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let backbone = Backbone::build(&config.backbone)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.backbone.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut extra = Vec::new();
        let mut pr_ranges = Vec::new();
        if config.toggles.pseudo_ref {
            for s in config.used_stages() {
                let start = extra.len();
                extra.extend(config.variant.init_params(s, config.backbone.stage_channels[s], &mut rng));
                pr_ranges.push(start..extra.len());
            }
        }
        let start = extra.len();
        extra.extend(head::init_head(config.feature_len(), &mut rng));
        let head_range = start..extra.len();
        Ok(Self { config: config.clone(), backbone, extra, pr_ranges, head_range })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone<T> {
        &self.backbone
    }

    /// All parameters in canonical order (backbone, pseudo-reference stages, head).
    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.backbone.params().iter().chain(&self.extra)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.backbone.params_mut().iter_mut().chain(&mut self.extra)
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.backbone.params().len() + self.extra.len()
    }

    fn owned_params(&self) -> Vec<Param<T>> {
        self.params().cloned().collect()
    }

    pub fn flat_params(&self) -> Tensor<T> {
        params::flatten(&self.owned_params())
    }

    pub fn cast<U: Real>(&self) -> PriqModel<U> {
        PriqModel {
            config: self.config.clone(),
            backbone: self.backbone.cast(),
            extra: self.extra.iter().map(Param::cast).collect(),
            pr_ranges: self.pr_ranges.clone(),
            head_range: self.head_range.clone(),
        }
    }

    /// Records parameters as gradient-requiring leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<ModelVars> {
        Ok(ModelVars { all: params::bind(tape, &self.owned_params())? })
    }

    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Result<ModelVars> {
        Ok(ModelVars { all: params::bind_frozen(tape, &self.owned_params())? })
    }

    /// Binds every parameter to a slice of one flat tape vector.
    pub fn bind_flat(&self, tape: &mut Tape<T>, flat: Var) -> Result<ModelVars> {
        Ok(ModelVars { all: params::bind_flat(tape, flat, &self.owned_params())? })
    }

    fn split<'a>(&self, vars: &'a ModelVars) -> Result<(&'a [Var], Vec<&'a [Var]>, &'a [Var])> {
        if vars.all.len() != self.num_params() {
            return Err(Error::Config(format!("model expects {} parameters, got {}", self.num_params(), vars.all.len())));
        }
        let nb = self.backbone.params().len();
        let (bb, rest) = vars.all.split_at(nb);
        let pr = self.pr_ranges.iter().map(|r| &rest[r.clone()]).collect();
        Ok((bb, pr, &rest[self.head_range.clone()]))
    }

    pub fn forward_backbone(&self, tape: &mut Tape<T>, vars: &ModelVars, images: Var) -> Result<Vec<FeatureStack>> {
        let (bb, _, _) = self.split(vars)?;
        self.backbone.forward_set(tape, bb, images)
    }

    /// Pyramid feature vectors `[M, F]` for consecutive sets of sizes
    /// `set_sizes` laid out along the leading axis of `images`.
    pub fn pyramid_features(&self, tape: &mut Tape<T>, vars: &ModelVars, images: Var, set_sizes: &[usize]) -> Result<Var> {
        let (bb, pr, _) = self.split(vars)?;
        check_sets(tape.shape(images), set_sizes)?;
        let stacks = self.backbone.forward_set(tape, bb, images)?;
        if !self.config.toggles.pseudo_ref {
            return Ok(tape.reduce(stacks[NUM_TAPS - 1].data, &[2, 3], ReduceMode::Mean)?);
        }
        let stages = self.config.used_stages();
        let agg = self.config.aggregation();
        let mut rows = Vec::with_capacity(tape.shape(images)[0]);
        let mut start = 0;
        for &n in set_sizes {
            let mut per_image: Vec<Vec<Var>> = vec![Vec::with_capacity(stages.len()); n];
            for (&s, stage_vars) in stages.iter().zip(&pr) {
                let z = if set_sizes.len() == 1 { stacks[s].data } else { tape.narrow(stacks[s].data, start, n)? };
                let fs = FeatureStack { stage: s, data: z };
                let w = pseudo_ref::compute_weights(tape, self.config.variant, stage_vars, &fs)?;
                let zbar = pseudo_ref::pseudo_reference(tape, &fs, &w)?;
                for (i, feats) in per_image.iter_mut().enumerate() {
                    let zi = tape.select(z, i)?;
                    feats.push(head::aggregate(tape, agg, zi, zbar, self.config.ssim)?);
                }
            }
            for feats in per_image {
                rows.push(tape.concat(&feats)?);
            }
            start += n;
        }
        Ok(tape.stack(&rows)?)
    }

    /// Scores for consecutive sets; each image is scored against its own
    /// set's pseudo-reference.
    pub fn predict_sets(&self, tape: &mut Tape<T>, vars: &ModelVars, images: Var, set_sizes: &[usize]) -> Result<Var> {
        let (_, _, hv) = self.split(vars)?;
        let features = self.pyramid_features(tape, vars, images, set_sizes)?;
        head::regress(tape, hv, features)
    }

    /// Scores one registered image set `[N, 3, H, W]` jointly.
    pub fn predict_set(&self, tape: &mut Tape<T>, vars: &ModelVars, images: Var) -> Result<Var> {
        let n = tape.shape(images).first().copied().unwrap_or(0);
        self.predict_sets(tape, vars, images, &[n])
    }

    /// Independent per-image scoring (no pseudo-reference): backbone, pooled
    /// final stage, head. Only valid for a model built without the
    /// pseudo-reference.
    pub fn predict_baseline(&self, tape: &mut Tape<T>, vars: &ModelVars, images: Var) -> Result<Var> {
        if self.config.toggles.pseudo_ref {
            return Err(Error::Config("predict_baseline needs a model built with pseudo_ref disabled".into()));
        }
        self.predict_set(tape, vars, images)
    }

    /// Inference convenience: scores for `images` partitioned into `set_sizes`.
    pub fn score(&self, images: &Tensor<T>, set_sizes: &[usize]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape)?;
        let x = tape.constant(images.clone())?;
        let out = self.predict_sets(&mut tape, &vars, x, set_sizes)?;
        Ok(tape.value(out).data().to_vec())
    }
}

fn check_sets(shape: &[usize], set_sizes: &[usize]) -> Result<()> {
    let total: usize = set_sizes.iter().sum();
    if set_sizes.is_empty() || set_sizes.contains(&0) {
        return Err(Error::Data(format!("set sizes must be positive, got {set_sizes:?}")));
    }
    if shape.first() != Some(&total) {
        return Err(Error::Data(format!("set sizes {set_sizes:?} do not cover image batch {shape:?}")));
    }
    Ok(())
}

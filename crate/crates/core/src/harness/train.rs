use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Checkpoint, RunConfig};
use crate::data::{sample_set_batch, Dataset};
use crate::error::{Error, Result};
use crate::model::PriqModel;
use crate::tensor::{Tape, Tensor, TensorError};

/// Set-batches per epoch: enough to draw every training image once on average.
pub fn steps_per_epoch(config: &RunConfig, train_images: usize) -> usize {
    train_images.div_ceil(config.batch_images()).max(1)
}

/// Stochastic gradient descent with heavy-ball momentum and optional L2
/// decay: `v = m*v + g + wd*w; w -= lr*v`.
struct Sgd {
    velocity: Vec<Vec<f32>>,
    momentum: f32,
    weight_decay: f32,
}

impl Sgd {
    fn new(model: &PriqModel<f32>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: model.params().map(|p| vec![0.0; p.value.len()]).collect(),
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
        }
    }

    fn step(&mut self, model: &mut PriqModel<f32>, grads: &[Option<Vec<f32>>], lr: f32) {
        for ((param, v), g) in model.params_mut().zip(&mut self.velocity).zip(grads) {
            let w = param.value.data_mut();
            for i in 0..w.len() {
                let gi = g.as_ref().map_or(0.0, |g| g[i]) + self.weight_decay * w[i];
                v[i] = self.momentum * v[i] + gi;
                w[i] -= lr * v[i];
            }
        }
    }
}

/// Per-epoch progress passed to the observer of [`train_with`].
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

pub fn train(config: &RunConfig, seed: u64, data: &Dataset) -> Result<Checkpoint> {
    train_with(config, seed, data, |_| {})
}

/// Trains a fresh model initialized from `seed` on `data`. Batches of
/// `batch_sets` single-scene sets of `n_train` images, each set augmented
/// with one shared crop and flip, are regressed onto the labels with the
/// Huber loss.
pub fn train_with(
    config: &RunConfig,
    seed: u64,
    data: &Dataset,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<Checkpoint> {
    config.validate()?;
    let mut model = PriqModel::<f32>::build(&config.model_config(seed))?;
    let mut opt = Sgd::new(&model, config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let steps = steps_per_epoch(config, data.image_count());
    let mut initial_loss = None;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut total = 0.0;
        for step in 0..steps {
            let diverged = |what: String| Error::Numerical(format!("training diverged at epoch {epoch}, step {step}: {what}"));
            let batch =
                sample_set_batch(data, config.batch_sets, config.n_train, &mut rng)?.augment(config.crop, &mut rng)?;
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape)?;
            let x = tape.constant(batch.to_tensor()?)?;
            let targets: Vec<f32> = batch.targets().iter().map(|&t| t as f32).collect();
            let target = tape.constant(Tensor::new(vec![targets.len()], targets)?)?;
            let forward = model
                .predict_sets(&mut tape, &vars, x, &batch.set_sizes())
                .and_then(|pred| Ok(tape.huber_loss(pred, target, config.huber_delta as f32)?));
            let loss = match forward {
                Err(Error::Tensor(TensorError::NonFinite { op })) => return Err(diverged(format!("non-finite {op} output"))),
                other => other?,
            };
            let value = f64::from(tape.value(loss).data()[0]);
            if !value.is_finite() {
                return Err(diverged(format!("loss {value}")));
            }
            initial_loss.get_or_insert(value);
            total += value;
            tape.backward(loss)?;
            let grads: Vec<Option<Vec<f32>>> = vars.all.iter().map(|&v| tape.grad(v).map(<[f32]>::to_vec)).collect();
            opt.step(&mut model, &grads, lr as f32);
            if model.params().any(|p| !p.value.all_finite()) {
                return Err(diverged("non-finite parameter after update".into()));
            }
        }
        let mean_loss = total / steps as f64;
        loss_curve.push(mean_loss);
        on_epoch(EpochStats { epoch, lr, mean_loss });
    }
    Ok(Checkpoint {
        config: config.clone(),
        seed,
        initial_loss: initial_loss.expect("at least one step"),
        loss_curve,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, DatasetConfig};
    use crate::model::Toggles;

    fn tiny_config() -> RunConfig {
        RunConfig {
            epochs: 2,
            batch_sets: 2,
            n_train: 3,
            dataset: DatasetConfig { scenes: 2, levels: vec![1, 4], image_size: 64, ..Default::default() },
            ..RunConfig::default()
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let config = tiny_config();
        let data = build_dataset(&config.dataset).unwrap();
        let a = train(&config, 5, &data).unwrap();
        let b = train(&config, 5, &data).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.loss_curve.len(), 2);
    }

    #[test]
    fn baseline_path_trains() {
        let config = RunConfig { toggles: Toggles::BASELINE, ..tiny_config() };
        let data = build_dataset(&config.dataset).unwrap();
        let ck = train(&config, 1, &data).unwrap();
        assert!(ck.loss_curve.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn divergence_is_numerical() {
        let config = RunConfig { learning_rate: 1e30, momentum: 0.0, epochs: 3, ..tiny_config() };
        let data = build_dataset(&config.dataset).unwrap();
        let err = train(&config, 1, &data).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn epoch_length() {
        let c = RunConfig::default();
        assert_eq!(steps_per_epoch(&c, 640), 22);
        assert_eq!(steps_per_epoch(&c, 10), 1);
    }
}

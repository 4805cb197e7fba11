//! Dataset split and the SGD training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AnnotatedImage;
use crate::geometry::{encode_targets, GeometryError};
use crate::loss::{record_yolo_loss, LossError, LossWeights};
use crate::model::{Model, ModelError};
use crate::tensor::{sgd_step, OptimError, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Diverged { step: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("cannot split {0} item(s); at least 2 are required")]
    TooFewItems(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("image {id}: {source}")]
    Target { id: String, source: GeometryError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub split_ratio: f64,
    /// Confidence threshold used when reporting detections after training.
    pub conf_threshold: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            steps: 2000,
            batch_size: 8,
            seed: 0,
            split_ratio: 0.8,
            conf_threshold: 0.5,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate {} must be finite and ≥ 0", self.learning_rate));
        }
        if self.steps == 0 {
            return bad("step count must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split ratio {} must lie in (0, 1)", self.split_ratio));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad(format!("confidence threshold {} must lie in [0, 1]", self.conf_threshold));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// Number of items that go to the training side of a split.
pub fn train_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).floor() as usize
}

/// Shuffles `items` with `seed` and cuts off the first `floor(ratio·n)` as
/// the training set.
pub fn split_dataset<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), TrainError> {
    if items.len() < 2 {
        return Err(TrainError::TooFewItems(items.len()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = train_count(items.len(), ratio);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Draws mini-batches from a reshuffled permutation of the dataset, one
/// epoch after another.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut sampler = BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
        };
        sampler.reshuffle_if_spent();
        sampler
    }

    fn reshuffle_if_spent(&mut self) {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
    }

    /// Sorted indices so per-image terms are always summed in the same order.
    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        if size >= n {
            return (0..n).collect();
        }
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            self.reshuffle_if_spent();
            let i = self.order[self.cursor];
            self.cursor += 1;
            if !batch.contains(&i) {
                batch.push(i);
            }
        }
        batch.sort_unstable();
        batch
    }
}

/// Loss and parameter gradients of one image.
fn image_loss_and_grads(
    model: &Model,
    image: &Tensor,
    target: &[f64],
    weights: LossWeights,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut tape = Tape::new();
    let (params, out) = model.record(&mut tape, image, true)?;
    let loss = record_yolo_loss(&mut tape, out, target, model.grid(), weights)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss).map_err(ModelError::from)?;
    Ok((value, params.into_iter().map(|p| grads.get(p)).collect()))
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn batch_loss_and_grads(
    model: &Model,
    images: &[&Tensor],
    targets: &[&[f64]],
    weights: LossWeights,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let n = images.len() as f64;
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for (image, target) in images.iter().zip(targets) {
        let (loss, grads) = image_loss_and_grads(model, image, target, weights)?;
        total += loss;
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    let mut grads = acc.ok_or(TrainError::EmptyDataset)?;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / n, grads))
}

/// Encoded training targets, one per image.
pub fn encode_dataset(model: &Model, dataset: &[AnnotatedImage]) -> Result<Vec<Vec<f64>>, TrainError> {
    dataset
        .iter()
        .map(|img| {
            encode_targets(&img.ground_truth(), model.grid())
                .map(|t| {
                    if t.collisions > 0 {
                        log::debug!("{}: {} object(s) share a cell and were dropped", img.source_id, t.collisions);
                    }
                    t.values
                })
                .map_err(|source| TrainError::Target {
                    id: img.source_id.clone(),
                    source,
                })
        })
        .collect()
}

/// Runs `config.steps` SGD steps. Entry `k` of the history is the mean
/// mini-batch loss evaluated before update `k`.
pub fn train(
    mut model: Model,
    dataset: &[AnnotatedImage],
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>), TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let targets = encode_dataset(&model, dataset)?;
    let mut sampler = BatchSampler::new(dataset.len(), config.seed);
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let images: Vec<&Tensor> = batch.iter().map(|&i| &dataset[i].pixels).collect();
        let batch_targets: Vec<&[f64]> = batch.iter().map(|&i| targets[i].as_slice()).collect();
        let (loss, grads) = batch_loss_and_grads(&model, &images, &batch_targets, config.weights).map_err(|e| match e {
            TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => TrainError::Diverged { step },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        sgd_step(model.params_mut(), &grads, config.learning_rate).map_err(|e| match e {
            OptimError::Diverged { .. } => TrainError::Diverged { step },
            other => TrainError::Config(other.to_string()),
        })?;
        history.push(loss);
        if step % 100 == 0 || step + 1 == config.steps {
            log::info!("step {step}: loss {loss:.6}");
        }
    }
    Ok((model, history))
}

/// `step,loss` CSV with a header line.
pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in history.iter().enumerate() {
        writeln!(out, "{step},{loss}").expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sized_split() {
        let items: Vec<usize> = (0..211).collect();
        let (train, test) = split_dataset(&items, 0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (168, 43));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split_dataset(&items, 0.8, 3).unwrap(), (train, test));
    }

    #[test]
    fn split_needs_two_items() {
        assert!(matches!(split_dataset(&[1], 0.8, 0), Err(TrainError::TooFewItems(1))));
    }

    #[test]
    fn batches_cover_an_epoch_without_repeats() {
        let mut s = BatchSampler::new(10, 5);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(2)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(BatchSampler::new(3, 0).next_batch(8), vec![0, 1, 2]);
    }

    #[test]
    fn config_rejects_nonsense() {
        let nan = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(nan.validate().is_err());
        let zero_steps = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(zero_steps.validate().is_err());
    }

    #[test]
    fn history_csv_has_header() {
        assert_eq!(history_csv(&[1.5, 0.25]), "step,loss\n0,1.5\n1,0.25\n");
    }
}

//! Adam training against softmax cross-entropy, and batched prediction.

mod adam;

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};

use crate::error::{Error, Result};
use crate::net::{softmax_rows, Model, ModelParameters, Probabilities, Tensor};
use crate::prep::{PatchSet, SplitAssignment};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Return the parameters of the epoch with the best validation accuracy
    /// instead of the last epoch.
    #[serde(default)]
    pub keep_best: bool,
    /// Samples evaluated per forward/backward pass. Gradients of the
    /// micro-batches are summed, so this bounds memory without changing the
    /// update.
    #[serde(default = "default_micro_batch")]
    pub micro_batch: usize,
}

fn default_micro_batch() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 256,
            epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
            keep_best: false,
            micro_batch: default_micro_batch(),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (it freezes the parameters).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-epoch curves and wall-clock totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean cross-entropy over the epoch's mini-batches.
    pub train_loss: Vec<f64>,
    /// Accuracy of the mini-batch predictions made during the epoch.
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Seconds spent in the training loop (validation passes excluded).
    pub train_seconds: f64,
    /// Seconds spent predicting the test split; filled in by the caller.
    #[serde(default)]
    pub test_seconds: f64,
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParameters,
    pub optimizer: Adam,
    pub history: TrainingHistory,
    best: Option<(f64, Vec<f64>)>,
}

impl TrainState {
    pub fn new(params: ModelParameters, adam: AdamConfig) -> Self {
        let n = params.len();
        Self {
            params,
            optimizer: Adam::new(adam, n),
            history: TrainingHistory::default(),
            best: None,
        }
    }

    pub fn resume(params: ModelParameters, optimizer: Adam, history: TrainingHistory) -> Result<Self> {
        if optimizer.m.len() != params.len() {
            return Err(Error::SizeMismatch {
                expected: params.len(),
                found: optimizer.m.len(),
            });
        }
        Ok(Self {
            params,
            optimizer,
            history,
            best: None,
        })
    }

    /// Final parameters, or the best-validation ones when requested and
    /// tracked during this session.
    pub fn selected(&self, keep_best: bool) -> ModelParameters {
        match (&self.best, keep_best) {
            (Some((_, values)), true) => ModelParameters {
                seed: self.params.seed,
                values: values.clone(),
            },
            _ => self.params.clone(),
        }
    }
}

/// Summed cross-entropy, summed parameter gradient and correct count for a
/// batch. Labels are 1-based.
pub fn loss_and_grad(model: &Model, params: &[f64], input: &Tensor, labels: &[usize], scale: f64, grads: &mut [f64]) -> Result<(f64, usize)> {
    let c = model.class_count();
    let acts = model.graph.forward(params, std::slice::from_ref(input), true)?;
    let logits = acts.output();
    let probs = softmax_rows(&logits.data, c);
    let mut loss = 0.0;
    let mut correct = 0;
    let mut dlogits = Tensor::zeros(logits.shape);
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > c {
            return Err(Error::InvalidLabel { index: i, value: y as f64 });
        }
        let row = &probs[i * c..(i + 1) * c];
        loss -= row[y - 1].max(f64::MIN_POSITIVE).ln();
        if argmax(row) + 1 == y {
            correct += 1;
        }
        for k in 0..c {
            let onehot = if k + 1 == y { 1.0 } else { 0.0 };
            dlogits.data[i * c + k] = (row[k] - onehot) * scale;
        }
    }
    model.graph.backward(params, &acts, dlogits, grads);
    Ok((loss, correct))
}

/// Index of the first maximum.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = k;
        }
    }
    best
}

fn check_compat(model: &Model, patches: &PatchSet) -> Result<()> {
    let s = model.input_shape();
    let want = [patches.patch_size, patches.patch_size, patches.components(), 1];
    if s != want {
        return Err(Error::Shape(format!(
            "model expects {}x{}x{} patches, set holds {}x{}x{}",
            s[0], s[1], s[2], want[0], want[1], want[2]
        )));
    }
    if patches.class_count != model.class_count() {
        return Err(Error::Shape(format!(
            "model has {} classes, patches have {}",
            model.class_count(),
            patches.class_count
        )));
    }
    Ok(())
}

/// Predicted labels and probabilities for a subset of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub probabilities: Probabilities,
}

/// Forward pass over `indices` in chunks of `chunk` patches.
pub fn predict_indices(model: &Model, params: &[f64], patches: &PatchSet, indices: &[usize], chunk: usize) -> Result<Prediction> {
    check_compat(model, patches)?;
    let c = model.class_count();
    let mut data = Vec::with_capacity(indices.len() * c);
    for part in indices.chunks(chunk.max(1)) {
        let x = model.input_tensor(part.len(), patches.gather_batch(part))?;
        data.extend(model.forward(params, &x)?.data);
    }
    let probabilities = Probabilities {
        rows: indices.len(),
        classes: c,
        data,
    };
    Ok(Prediction {
        labels: probabilities.argmax_labels(),
        probabilities,
    })
}

/// Predicts every patch in the set.
pub fn predict(model: &Model, params: &[f64], patches: &PatchSet) -> Result<Prediction> {
    let all: Vec<usize> = (0..patches.len()).collect();
    predict_indices(model, params, patches, &all, 64)
}

/// Mean cross-entropy and accuracy on a subset, parameters frozen.
pub fn evaluate_loss(model: &Model, params: &[f64], patches: &PatchSet, indices: &[usize], chunk: usize) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let p = predict_indices(model, params, patches, indices, chunk)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (k, &i) in indices.iter().enumerate() {
        let y = patches.labels[i];
        loss -= p.probabilities.row(k)[y - 1].max(f64::MIN_POSITIVE).ln();
        correct += usize::from(p.labels[k] == y);
    }
    let n = indices.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Shuffled order of the training indices for one epoch.
fn epoch_order(train: &[usize], cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    let key = seed::derive(seed::derive(cfg.seed, seed::stream::SHUFFLE), epoch as u64);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
    order
}

/// Runs epochs until `state.history` holds `cfg.epochs` of them, calling
/// `on_epoch` after each.
pub fn train_from(
    model: &Model,
    mut state: TrainState,
    patches: &PatchSet,
    split: &SplitAssignment,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    check_compat(model, patches)?;
    split.check_against(patches)?;
    let train = split.train_idx();
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    let val = split.val_idx();
    let n_params = model.parameter_count();
    if state.params.len() != n_params {
        return Err(Error::SizeMismatch {
            expected: n_params,
            found: state.params.len(),
        });
    }
    let mut grads = vec![0.0; n_params];
    while state.history.epochs() < cfg.epochs {
        let epoch = state.history.epochs();
        let start = Instant::now();
        let order = epoch_order(&train, cfg, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for micro in batch.chunks(cfg.micro_batch) {
                let x = model.input_tensor(micro.len(), patches.gather_batch(micro))?;
                let labels: Vec<usize> = micro.iter().map(|&i| patches.labels[i]).collect();
                let (l, c) = loss_and_grad(model, &state.params.values, &x, &labels, scale, &mut grads)?;
                batch_loss += l;
                correct += c;
            }
            let batch_loss = batch_loss * scale;
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            state.optimizer.update(&mut state.params.values, &grads, cfg.learning_rate);
            loss_sum += batch_loss;
            batches += 1;
        }
        state.history.train_seconds += start.elapsed().as_secs_f64();
        let h = &mut state.history;
        h.train_loss.push(loss_sum / batches as f64);
        h.train_accuracy.push(correct as f64 / train.len() as f64);
        let (vl, va) = evaluate_loss(model, &state.params.values, patches, &val, cfg.micro_batch)?;
        h.val_loss.push(vl);
        h.val_accuracy.push(va);
        if va.is_finite() && state.best.as_ref().is_none_or(|(b, _)| va > *b) {
            state.best = Some((va, state.params.values.clone()));
            state.history.best_epoch = Some(epoch + 1);
        }
        let h = &state.history;
        let log_line = format!(
            "epoch {}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            epoch + 1,
            cfg.epochs,
            h.train_loss[epoch],
            h.train_accuracy[epoch],
            vl,
            va
        );
        if (epoch + 1).is_multiple_of(10) || epoch + 1 == cfg.epochs {
            info!("{log_line}");
        } else {
            debug!("{log_line}");
        }
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(
    model: &Model,
    patches: &PatchSet,
    split: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, TrainingHistory)> {
    let init = ModelParameters::init(model, cfg.seed);
    let state = train_from(model, TrainState::new(init, cfg.adam), patches, split, cfg, |_| Ok(()))?;
    Ok((state.selected(cfg.keep_best), state.history))
}

#[cfg(test)]
mod tests;

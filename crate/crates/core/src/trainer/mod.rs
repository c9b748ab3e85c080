//! Train-then-prune loop: one SGD epoch, one prune step, repeat.

mod nn;

pub use nn::{backward, backward_with, forward, forward_with, predict, softmax_xent, ForwardCache, Gradients};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{conv_param_count, prune_conv_layer, ModelGraph, PruneConfig, PruneReport, Pruner};
use crate::error::{Error, Result};
use crate::linalg::{Exec, Scalar};
use crate::ranking::PruneSelection;
use crate::tensor::Tensor4;

/// Labelled images stored as one contiguous `n × c × h × w` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Gathers the listed examples into a batch, optionally mirroring some
    /// of them horizontally.
    pub fn batch(&self, idx: &[usize], flips: Option<&[bool]>) -> Result<Batch> {
        let n = self.image_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for (k, &i) in idx.iter().enumerate() {
            let img = self.image(i);
            if flips.is_some_and(|f| f[k]) {
                for row in img.chunks(self.width) {
                    data.extend(row.iter().rev());
                }
            } else {
                data.extend_from_slice(img);
            }
        }
        Ok(Batch {
            images: Tensor4::new([idx.len(), self.channels, self.height, self.width], data)?,
            labels: idx.iter().map(|&i| self.labels[i] as usize).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiply the rate by `lr_gamma` every `lr_step` epochs; 0 disables.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub seed: u64,
    pub hflip: bool,
    pub exec: Exec,
    pub prune: Option<PruneConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_step: 10,
            lr_gamma: 0.1,
            seed: 0,
            hflip: false,
            exec: Exec::Sequential,
            prune: Some(PruneConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay", "must be non-negative"));
        }
        if let Some(p) = &self.prune {
            p.validate()?;
            if p.prune_epochs > self.epochs {
                return Err(Error::invalid("prune_epochs", "cannot exceed epochs"));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_step {
            0 => self.learning_rate,
            step => self.learning_rate * self.lr_gamma.powi(((epoch - 1) / step) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub conv_params: usize,
    pub cumulative_reduction_percent: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub records: Vec<EpochRecord>,
    pub reports: Vec<PruneReport>,
}

/// `v ← μv + (g + λw)`, `w ← w − ηv`; biases are not decayed.
pub fn sgd_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    velocity: &mut ModelGraph<T>,
    grads: &ModelGraph<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if model.param_signature() != velocity.param_signature() || model.param_signature() != grads.param_signature() {
        return Err(Error::StaleCache);
    }
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for (((w, is_bias), (v, _)), (g, _)) in model
        .params_mut()
        .into_iter()
        .zip(velocity.params_mut())
        .zip(grads.params())
    {
        let decay = if is_bias { T::zero() } else { wd };
        for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g + decay * *w;
            *w = *w - lr * *v;
        }
    }
    Ok(())
}

/// Top-1 accuracy in percent, evaluated in chunks of `chunk` images.
pub fn evaluate(g: &ModelGraph, data: &Dataset, chunk: usize, exec: Exec) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let batch = data.batch(part, None)?;
        let logits = predict(g, &batch.images, exec)?;
        for (r, &label) in batch.labels.iter().enumerate() {
            let row = logits.row(r);
            let arg = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            correct += usize::from(arg == label);
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Trains `model` and prunes it after each of the first `prune_epochs`
/// epochs. No separate finetuning phase follows.
pub fn train_prune(
    model: ModelGraph,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("data", "training set is empty"));
    }
    let pruner = cfg
        .prune
        .clone()
        .map(|p| Pruner::new(p, &model).map(|p| p.with_exec(cfg.exec)))
        .transpose()?;
    let original_params = conv_param_count(&model).total();
    let mut model = model;
    let mut velocity = model.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut reports = Vec::new();

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for part in order.chunks(cfg.batch_size) {
            let flips: Option<Vec<bool>> = cfg
                .hflip
                .then(|| part.iter().map(|_| rng.random_bool(0.5)).collect());
            let batch = train.batch(part, flips.as_deref())?;
            let (_, cache) = forward_with(&model, &batch.images, cfg.exec)?;
            let grads = backward_with(&model, &cache, &batch.labels, cfg.exec)?;
            loss_sum += grads.loss * part.len() as f64;
            correct += grads.correct;
            sgd_step(&mut model, &mut velocity, &grads.grads, lr, cfg.momentum, cfg.weight_decay)?;
        }

        if let Some(pruner) = &pruner {
            if epoch <= pruner.config().prune_epochs {
                let (pruned, report) = pruner.step(&model, epoch)?;
                for entry in report.layers.iter().filter(|e| !e.pruned_indices.is_empty()) {
                    let sel = PruneSelection {
                        layer_id: entry.layer_id,
                        indices: entry.pruned_indices.clone(),
                        ratio_used: pruner.config().ratio,
                        floor_applied: false,
                    };
                    velocity = prune_conv_layer(&velocity, entry.layer_id, &sel)?;
                }
                model = pruned;
                reports.push(report);
            }
        }

        let conv_params = conv_param_count(&model).total();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: 100.0 * correct as f64 / train.len() as f64,
            test_acc: evaluate(&model, test, 200, cfg.exec)?,
            conv_params,
            cumulative_reduction_percent: crate::engine::reduction_percent(original_params, conv_params),
        };
        info!(
            "epoch {:>3}  lr {:.4}  loss {:.4}  train {:.2}%  test {:.2}%  conv params {} (-{:.2}%)",
            epoch, lr, record.train_loss, record.train_acc, record.test_acc, conv_params,
            record.cumulative_reduction_percent
        );
        on_epoch(&record);
        records.push(record);
    }

    Ok(TrainOutcome {
        model,
        records,
        reports,
    })
}

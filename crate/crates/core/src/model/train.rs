//! Mini-batch training: seeded per-epoch shuffles, cross-entropy averaged
//! per batch, AdamW steps driven by the slanted-triangular envelope with
//! discriminative per-group rates. The dev split, when given, is scored
//! after each epoch and reported, never used for selection.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::corpus::Dataset;
use crate::nn::{adamw_step, argmax, schedule_lr, AdamHyper, OptimizerState, ScheduleConfig};
use crate::rng::substream;

use super::classifier::ClassifierModel;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamHyper,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Inverse-frequency loss weights; off by default.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            optimizer: AdamHyper::default(),
            schedule: ScheduleConfig::default(),
            seed: 42,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_acc: Option<f64>,
}

fn encode_and_label(
    model: &ClassifierModel,
    data: &Dataset,
) -> Result<(Vec<Vec<usize>>, Vec<usize>), ModelError> {
    if data.language != model.language {
        return Err(ModelError::Corpus(crate::corpus::CorpusError::LanguageMismatch {
            expected: model.language,
            got: data.language,
        }));
    }
    let mut encoded = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for (index, sample) in data.iter().enumerate() {
        let label = sample
            .label
            .ok_or(ModelError::UnlabeledSample { index })?;
        let class = model
            .class_index(label)
            .ok_or_else(|| ModelError::Config(format!("label {label} outside the model's label set")))?;
        encoded.push(model.encode(&sample.text));
        targets.push(class);
    }
    Ok((encoded, targets))
}

fn accuracy(model: &ClassifierModel, encoded: &[Vec<usize>], targets: &[usize]) -> Result<f64, ModelError> {
    let mut correct = 0usize;
    for (ids, &target) in encoded.iter().zip(targets) {
        let cache = model.forward_cached(ids, None)?;
        if argmax(&cache.probs) == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / encoded.len() as f64)
}

/// Train in place and return one stats entry per epoch.
pub fn train(
    model: &mut ClassifierModel,
    data: &Dataset,
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let (encoded, targets) = encode_and_label(model, data)?;
    let dev_encoded = dev.map(|d| encode_and_label(model, d)).transpose()?;

    let n = encoded.len();
    let num_classes = model.config.num_classes;
    let weights: Vec<f64> = if cfg.class_weighting {
        let mut counts = vec![0usize; num_classes];
        for &t in &targets {
            counts[t] += 1;
        }
        targets
            .iter()
            .map(|&t| n as f64 / (num_classes as f64 * counts[t] as f64))
            .collect()
    } else {
        vec![1.0; n]
    };

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let schedule = cfg.schedule.with_total_steps(total_steps);
    let num_groups = model.num_schedule_groups();

    // Optimizer state and schedule group per tensor, in visit order.
    let mut groups: Vec<usize> = Vec::new();
    let mut opt_states: Vec<OptimizerState> = Vec::new();
    model.params.visit(&mut |name, m| {
        groups.push(model.schedule_group(&name));
        opt_states.push(OptimizerState::for_param(m, cfg.optimizer));
    });

    let mut grads = model.zero_grads();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(cfg.seed, &format!("shuffle-epoch-{epoch}")));
        let mut dropout_rng = substream(cfg.seed, &format!("dropout-epoch-{epoch}"));

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.visit_mut(&mut |_, m| m.data_mut().fill(0.0));
            let batch_scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let cache = model.forward_cached(&encoded[idx], Some(&mut dropout_rng))?;
                let loss = weights[idx] * model.sample_loss(&cache, targets[idx])?;
                if !loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        epoch,
                        step: step + 1,
                        value: loss,
                    });
                }
                loss_sum += loss;
                model.backward(&cache, targets[idx], weights[idx] * batch_scale, &mut grads)?;
            }
            step += 1;

            let mut group_lrs = Vec::with_capacity(num_groups);
            for g in 0..num_groups {
                group_lrs.push(schedule_lr(step, g, num_groups, &schedule)?);
            }
            let mut grad_refs: Vec<&crate::nn::Matrix> = Vec::with_capacity(opt_states.len());
            grads.visit(&mut |_, m| grad_refs.push(m));
            let mut tensor_idx = 0usize;
            let mut step_err: Option<crate::nn::NnError> = None;
            model.params.visit_mut(&mut |_, param| {
                let state = &mut opt_states[tensor_idx];
                state.hyper.lr = group_lrs[groups[tensor_idx]];
                if let Err(e) = adamw_step(param, grad_refs[tensor_idx], state) {
                    step_err.get_or_insert(e);
                }
                tensor_idx += 1;
            });
            drop(grad_refs);
            if let Some(e) = step_err {
                return Err(ModelError::Nn(e));
            }
        }

        let train_acc = accuracy(model, &encoded, &targets)?;
        let dev_acc = dev_encoded
            .as_ref()
            .map(|(e, t)| accuracy(model, e, t))
            .transpose()?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc,
            dev_acc,
        });
    }
    Ok(history)
}

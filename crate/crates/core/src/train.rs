//! Mini-batch training and model evaluation.

use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Var};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{MoEmoNet, ModelConfig};
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::Binding;
use crate::scalar::Scalar;
use crate::seed::{rng, substream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 32,
            learning_rate: 3e-4,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            split_fraction: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split_fraction {} not in (0, 1)", self.split_fraction)));
        }
        // Zero is allowed: it is the frozen-parameter probe.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            s.push_str(&format!("{},{:?}\n", i + 1, l));
        }
        s
    }
}

/// A freshly initialized network whose weights come from the `init`
/// substream of `seed`.
pub fn init_model<T: Scalar>(config: ModelConfig, seed: u64) -> Result<MoEmoNet<T>> {
    MoEmoNet::new(config, substream(seed, Stream::Init))
}

/// Builds the mean cross-entropy of `batch` on `tape`. All context frames of
/// the batch go through the embedding block as one matrix.
pub fn batch_loss<T: Scalar>(net: &MoEmoNet<T>, tape: &mut Tape<T>, p: &Binding, batch: &[&Sample]) -> Result<Var> {
    let logits = batch_logits(net, tape, p, batch)?;
    let targets: Vec<usize> = batch.iter().map(|s| s.label).collect();
    tape.cross_entropy(logits, &targets)
}

/// `[batch, n_classes]` logits.
pub fn batch_logits<T: Scalar>(net: &MoEmoNet<T>, tape: &mut Tape<T>, p: &Binding, batch: &[&Sample]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let config = &net.config;
    let contexts = if config.variant.uses_context() {
        let width = config.context_dims.width();
        let mut data = Vec::new();
        let mut lengths = Vec::with_capacity(batch.len());
        for s in batch {
            let map = s.context_map(config.context_dims)?.ok_or_else(|| Error::VariantMismatch {
                variant: config.variant.to_string(),
                reason: format!("sample {} has no context map", s.clip_id),
            })?;
            data.extend(map.data().iter().map(|&v| T::lit(v as f64)));
            lengths.push(map.frames());
        }
        let total: usize = lengths.iter().sum();
        let frames = tape.constant(Tensor::new(vec![total, width], data)?);
        let tokens = net.context_tokens(tape, p, frames)?;
        let mut offset = 0;
        let mut per_clip = Vec::with_capacity(batch.len());
        for len in lengths {
            per_clip.push(Some(tape.narrow(tokens, 0, offset, len)?));
            offset += len;
        }
        per_clip
    } else {
        vec![None; batch.len()]
    };
    let logits = batch
        .iter()
        .zip(contexts)
        .map(|(s, c)| net.forward_logits(tape, p, &s.vectors, c, None))
        .collect::<Result<Vec<_>>>()?;
    if logits.len() == 1 {
        Ok(logits[0])
    } else {
        tape.concat(&logits, 0)
    }
}

/// Trains `net` in place. `on_epoch` sees each epoch's index and mean loss.
pub fn train<T: Scalar>(
    net: &mut MoEmoNet<T>,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut shuffle = rng(config.seed, Stream::Shuffle);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut tape = Tape::new();
            let p = net.bind(&mut tape);
            let loss = batch_loss(net, &mut tape, &p, &batch)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            drop(batch);
            net.store.zero_grads();
            net.store.accumulate_grads(&p, &grads, T::one());
            optimizer.step(&mut net.store);
        }
        let mean = total / samples.len() as f64;
        curve.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainReport {
        loss_curve: curve,
        steps: optimizer.steps(),
    })
}

/// Predicted class of every sample.
pub fn predict_all<T: Scalar>(net: &MoEmoNet<T>, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            let map = if net.config.variant.uses_context() {
                s.context_map(net.config.context_dims)?
            } else {
                None
            };
            Ok(net.predict(&s.vectors, map.as_deref())?.argmax())
        })
        .collect()
}

pub fn evaluate_model<T: Scalar>(net: &MoEmoNet<T>, samples: &[Sample]) -> Result<EvalReport> {
    let predictions = predict_all(net, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    evaluate(&labels, &predictions, net.config.n_classes)
}

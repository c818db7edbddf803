use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Params, Seq2Seq};
use crate::corpus::EncodedSample;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(p: &Params) -> Adam {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, _, p), (_, _, g)), (_, _, m)), (_, _, v)) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Minibatch Adam with teacher forcing, reshuffling every epoch.
pub fn train(model: &mut Seq2Seq, data: &[EncodedSample]) -> Result<TrainLog> {
    let config = model.config.clone();
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    let all: Vec<&EncodedSample> = data.iter().collect();
    let initial_loss = model.loss(&all)?;
    let mut log = TrainLog {
        initial_loss,
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    log::info!("training on {} samples, initial loss {initial_loss:.4}", data.len());
    let mut rng = seed::rng(seed::derive(config.seed, "shuffle"));
    let mut adam = Adam::new(&model.params);
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &data[i]).collect();
            grads.fill(0.0);
            let loss = model.accumulate_gradient(&batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            if config.grad_clip > 0.0 {
                let norm = grads.squared_norm().sqrt();
                if norm > config.grad_clip {
                    grads.scale(config.grad_clip / norm);
                }
            }
            adam.step(&mut model.params, &grads, config.learning_rate);
            if !model.params.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("epoch {} loss {mean:.4}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

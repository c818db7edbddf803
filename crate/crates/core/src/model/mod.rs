//! Sequence-to-sequence summarizer: a bidirectional LSTM encoder, an
//! additive-attention LSTM decoder and a linear output layer, all in `f64`.

mod checkpoint;
mod gradcheck;
mod network;
mod params;
mod repr;
mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSample, EOS};
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, GradientCheck};
pub use params::{ParamGroup, Params};
pub use repr::{
    extract_many, extract_representations, read_representations, write_representations,
    RepresentationKind,
    RepresentationSet, SampleVectors,
};
pub use train::{train, TrainLog};

/// Which final encoder states form the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderOutput {
    #[default]
    HiddenAndCell,
    HiddenOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Per encoder direction; also the decoder and attention width.
    pub hidden_dim: usize,
    pub input_vocab: usize,
    pub output_vocab: usize,
    pub max_decode_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    pub encoder_output: EncoderOutput,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden_dim: 64,
            input_vocab: 2000,
            output_vocab: 500,
            max_decode_len: 8,
            learning_rate: 0.005,
            epochs: 10,
            batch_size: 32,
            grad_clip: 5.0,
            encoder_output: EncoderOutput::HiddenAndCell,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("input_vocab", self.input_vocab),
            ("output_vocab", self.output_vocab),
            ("max_decode_len", self.max_decode_len),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        // BOS..EOS are always present in the output vocabulary.
        if self.output_vocab <= EOS {
            return Err(Error::InvalidConfig(format!(
                "output_vocab must exceed {EOS}"
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::InvalidConfig("grad_clip must be >= 0".into()));
        }
        Ok(())
    }

    /// Width of the encoder output vector.
    pub fn encoder_output_dim(&self) -> usize {
        match self.encoder_output {
            EncoderOutput::HiddenAndCell => 4 * self.hidden_dim,
            EncoderOutput::HiddenOnly => 2 * self.hidden_dim,
        }
    }
}

/// Per-step outputs of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    /// Output distribution at each target step.
    pub distributions: Vec<Vec<f64>>,
    /// Attention weights over input positions at each target step.
    pub attention: Vec<Vec<f64>>,
    pub encoder_output: Vec<f64>,
    pub context_vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: Params,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig) -> Result<Seq2Seq> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(Seq2Seq { config, params })
    }

    fn check_sample(&self, input: &[usize], target: Option<&[usize]>) -> Result<()> {
        if input.is_empty() {
            return Err(Error::DimensionMismatch("empty input sequence".into()));
        }
        if let Some(&bad) = input.iter().find(|&&t| t >= self.config.input_vocab) {
            return Err(Error::DimensionMismatch(format!(
                "input token {bad} outside vocabulary of {}",
                self.config.input_vocab
            )));
        }
        if let Some(target) = target {
            if target.len() < 2 {
                return Err(Error::DimensionMismatch(
                    "target needs at least BOS and one more token".into(),
                ));
            }
            if let Some(&bad) = target.iter().find(|&&t| t >= self.config.output_vocab) {
                return Err(Error::DimensionMismatch(format!(
                    "target token {bad} outside vocabulary of {}",
                    self.config.output_vocab
                )));
            }
        }
        Ok(())
    }

    /// Teacher-forced pass; `target` starts with BOS.
    pub fn forward(&self, input: &[usize], target: &[usize]) -> Result<ForwardOutput> {
        self.check_sample(input, Some(target))?;
        let trace = network::forward(&self.params, &self.config, input, target);
        Ok(ForwardOutput {
            loss: trace.loss,
            distributions: (0..trace.probs.rows)
                .map(|j| trace.probs.row(j).to_vec())
                .collect(),
            attention: trace.steps.iter().map(|s| s.attention.clone()).collect(),
            encoder_output: trace.enc.output.clone(),
            context_vectors: trace.steps.iter().map(|s| s.context.clone()).collect(),
        })
    }

    /// Mean loss and parameter gradient over `batch`.
    pub fn loss_and_gradient(&self, batch: &[&EncodedSample]) -> Result<(f64, Params)> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_gradient(batch, &mut grads)?;
        Ok((loss, grads))
    }

    pub(crate) fn accumulate_gradient(
        &self,
        batch: &[&EncodedSample],
        grads: &mut Params,
    ) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            self.check_sample(&s.input, Some(&s.target))?;
            let trace = network::forward(&self.params, &self.config, &s.input, &s.target);
            network::backward(&self.params, &self.config, &s.input, &s.target, &trace, scale, grads);
            loss += trace.loss * scale;
        }
        Ok(loss)
    }

    /// Mean teacher-forced loss over `batch` without gradients.
    pub fn loss(&self, batch: &[&EncodedSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            total += self.forward(&s.input, &s.target)?.loss;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss over `batch` shifted by the constant `ln V`, computed to
    /// resolve tiny parameter perturbations; see the gradient check.
    pub(crate) fn shifted_loss(&self, batch: &[&EncodedSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            self.check_sample(&s.input, Some(&s.target))?;
            total += network::shifted_loss(&self.params, &self.config, &s.input, &s.target);
        }
        Ok(total / batch.len() as f64)
    }

    /// Greedy decode; EOS is dropped from the result.
    pub fn predict(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check_sample(input, None)?;
        let mut tokens = network::greedy(&self.params, &self.config, input).tokens;
        if tokens.last() == Some(&EOS) {
            tokens.pop();
        }
        Ok(tokens)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }
}

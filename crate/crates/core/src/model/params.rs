use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::linalg::Matrix;
use crate::seed;

/// Parameter families, used to report gradient checks per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Encoder,
    Attention,
    Decoder,
    Projection,
}

macro_rules! params {
    ($($field:ident: $group:ident),* $(,)?) => {
        /// All trainable tensors. Biases are stored as `1 × n` matrices.
        /// The same shape doubles as the gradient container.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Params {
            $(pub $field: Matrix,)*
        }

        impl Params {
            pub fn tensors(&self) -> Vec<(&'static str, ParamGroup, &Matrix)> {
                vec![$((stringify!($field), ParamGroup::$group, &self.$field),)*]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, ParamGroup, &mut Matrix)> {
                vec![$((stringify!($field), ParamGroup::$group, &mut self.$field),)*]
            }

            pub fn zeros_like(&self) -> Params {
                Params { $($field: Matrix::zeros(self.$field.rows, self.$field.cols),)* }
            }
        }
    };
}

params! {
    src_embed: Embedding,
    enc_fwd_w: Encoder,
    enc_fwd_b: Encoder,
    enc_bwd_w: Encoder,
    enc_bwd_b: Encoder,
    bridge_w: Decoder,
    bridge_b: Decoder,
    tgt_embed: Embedding,
    att_query: Attention,
    att_key: Attention,
    att_bias: Attention,
    att_score: Attention,
    dec_w: Decoder,
    dec_b: Decoder,
    out_w: Projection,
    out_b: Projection,
}

impl Params {
    /// Uniform(−s, s) with s = 1/√fan-in; embeddings use their own width as
    /// fan-in, biases that of the weight they belong to.
    pub fn init(config: &ModelConfig) -> Params {
        let e = config.embed_dim;
        let h = config.hidden_dim;
        let k = 2 * h;
        let z = config.encoder_output_dim();
        let mut rng = seed::rng(config.seed);
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-s..=s)).collect(),
            )
        };
        Params {
            src_embed: uniform(config.input_vocab, e, e),
            enc_fwd_w: uniform(4 * h, e + h, e + h),
            enc_fwd_b: uniform(1, 4 * h, e + h),
            enc_bwd_w: uniform(4 * h, e + h, e + h),
            enc_bwd_b: uniform(1, 4 * h, e + h),
            bridge_w: uniform(2 * h, z, z),
            bridge_b: uniform(1, 2 * h, z),
            tgt_embed: uniform(config.output_vocab, e, e),
            att_query: uniform(h, h, h),
            att_key: uniform(h, k, k),
            att_bias: uniform(1, h, h),
            att_score: uniform(1, h, h),
            dec_w: uniform(4 * h, e + k + h, e + k + h),
            dec_b: uniform(1, 4 * h, e + k + h),
            out_w: uniform(config.output_vocab, h + k, h + k),
            out_b: uniform(1, config.output_vocab, h + k),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, _, t)| t.data.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

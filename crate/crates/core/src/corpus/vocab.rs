use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CodeSample, Dataset};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub const DEFAULT_MAX_LEN: usize = 128;

/// Token ↔ index map with four reserved entries at indices 0..4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent tokens; ties go to the lexicographically
    /// smaller token.
    pub fn from_counts(counts: HashMap<&str, usize>, cap: usize) -> Self {
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        self.tokens.get(index).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Input (code token) and output (name subtoken) vocabularies of a training set.
pub fn build_vocab(train: &Dataset, input_cap: usize, output_cap: usize) -> (Vocabulary, Vocabulary) {
    let mut inputs: HashMap<&str, usize> = HashMap::new();
    let mut outputs: HashMap<&str, usize> = HashMap::new();
    for s in &train.samples {
        for t in &s.code_tokens {
            *inputs.entry(t).or_default() += 1;
        }
        for t in &s.name_subtokens {
            *outputs.entry(t).or_default() += 1;
        }
    }
    (
        Vocabulary::from_counts(inputs, input_cap),
        Vocabulary::from_counts(outputs, output_cap),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub id: u64,
    /// Code token indices, at most `max_len`, never empty.
    pub input: Vec<usize>,
    /// `BOS name.. EOS`.
    pub target: Vec<usize>,
}

/// Index-encodes a sample. The input keeps its first `max_len` tokens; an
/// empty body encodes as a single PAD so every input has at least one step.
pub fn encode(
    sample: &CodeSample,
    input_vocab: &Vocabulary,
    output_vocab: &Vocabulary,
    max_len: usize,
) -> EncodedSample {
    let mut input: Vec<usize> = sample
        .code_tokens
        .iter()
        .take(max_len)
        .map(|t| input_vocab.index_of(t))
        .collect();
    if input.is_empty() {
        input.push(PAD);
    }
    let mut target = Vec::with_capacity(sample.name_subtokens.len() + 2);
    target.push(BOS);
    target.extend(sample.name_subtokens.iter().map(|t| output_vocab.index_of(t)));
    target.push(EOS);
    EncodedSample {
        id: sample.id,
        input,
        target,
    }
}

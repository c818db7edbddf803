use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network;
use super::Seq2Seq;
use crate::corpus::EncodedSample;
use crate::linalg::{axpy, Matrix};
use crate::{Error, Result};

/// Internal vectors the detector can be run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    /// Final forward and backward encoder states.
    EncoderOutput,
    /// Attention context at every greedy decode step.
    ContextVectors,
    MeanContext,
    /// Decoder cell state at every greedy decode step.
    DecoderStates,
    MeanDecoderState,
    /// Mean of the input token embeddings.
    MeanInputEmbedding,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 6] = [
        RepresentationKind::EncoderOutput,
        RepresentationKind::ContextVectors,
        RepresentationKind::MeanContext,
        RepresentationKind::DecoderStates,
        RepresentationKind::MeanDecoderState,
        RepresentationKind::MeanInputEmbedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::EncoderOutput => "encoder_output",
            RepresentationKind::ContextVectors => "context_vectors",
            RepresentationKind::MeanContext => "mean_context",
            RepresentationKind::DecoderStates => "decoder_states",
            RepresentationKind::MeanDecoderState => "mean_decoder_state",
            RepresentationKind::MeanInputEmbedding => "mean_input_embedding",
        }
    }

    /// Kinds with one vector per decode step rather than one per sample.
    pub fn is_multi_vector(self) -> bool {
        matches!(
            self,
            RepresentationKind::ContextVectors | RepresentationKind::DecoderStates
        )
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepresentationKind {
    type Err = Error;

    /// Accepts both `snake_case` and `kebab-case` spellings.
    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        RepresentationKind::ALL
            .into_iter()
            .find(|k| k.name() == normalized)
            .ok_or_else(|| Error::UnknownRepresentation(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVectors {
    pub id: u64,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    pub kind: RepresentationKind,
    pub dim: usize,
    pub samples: Vec<SampleVectors>,
}

impl RepresentationSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn vector_count(&self) -> usize {
        self.samples.iter().map(|s| s.vectors.len()).sum()
    }

    /// Stacks every vector into a matrix; the second value gives the owning
    /// sample id of each row.
    pub fn stacked(&self) -> (Matrix, Vec<u64>) {
        let n = self.vector_count();
        let mut m = Matrix::zeros(n, self.dim);
        let mut owners = Vec::with_capacity(n);
        let mut r = 0;
        for s in &self.samples {
            for v in &s.vectors {
                m.row_mut(r).copy_from_slice(v);
                owners.push(s.id);
                r += 1;
            }
        }
        (m, owners)
    }
}

fn mean(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for r in rows {
        axpy(1.0, r, &mut acc);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        acc.iter_mut().for_each(|x| *x /= n);
    }
    acc
}

fn dim_of(model: &Seq2Seq, kind: RepresentationKind) -> usize {
    let h = model.config.hidden_dim;
    match kind {
        RepresentationKind::EncoderOutput => model.config.encoder_output_dim(),
        RepresentationKind::ContextVectors | RepresentationKind::MeanContext => 2 * h,
        RepresentationKind::DecoderStates | RepresentationKind::MeanDecoderState => h,
        RepresentationKind::MeanInputEmbedding => model.config.embed_dim,
    }
}

/// Runs greedy decoding once per sample and collects every requested kind.
pub fn extract_many(
    model: &Seq2Seq,
    samples: &[EncodedSample],
    kinds: &[RepresentationKind],
) -> Result<Vec<RepresentationSet>> {
    let mut sets: Vec<RepresentationSet> = kinds
        .iter()
        .map(|&kind| RepresentationSet {
            kind,
            dim: dim_of(model, kind),
            samples: Vec::with_capacity(samples.len()),
        })
        .collect();
    for s in samples {
        model.check_sample(&s.input, None)?;
        let decoded = network::greedy(&model.params, &model.config, &s.input);
        let contexts: Vec<Vec<f64>> = decoded.steps.iter().map(|st| st.context.clone()).collect();
        let cells: Vec<Vec<f64>> = decoded.steps.iter().map(|st| st.cell.clone()).collect();
        for set in sets.iter_mut() {
            let vectors = match set.kind {
                RepresentationKind::EncoderOutput => vec![decoded.enc.output.clone()],
                RepresentationKind::ContextVectors => contexts.clone(),
                RepresentationKind::MeanContext => vec![mean(&contexts, set.dim)],
                RepresentationKind::DecoderStates => cells.clone(),
                RepresentationKind::MeanDecoderState => vec![mean(&cells, set.dim)],
                RepresentationKind::MeanInputEmbedding => {
                    let rows: Vec<Vec<f64>> = s
                        .input
                        .iter()
                        .map(|&t| model.params.src_embed.row(t).to_vec())
                        .collect();
                    vec![mean(&rows, set.dim)]
                }
            };
            set.samples.push(SampleVectors { id: s.id, vectors });
        }
    }
    Ok(sets)
}

pub fn extract_representations(
    model: &Seq2Seq,
    samples: &[EncodedSample],
    kind: RepresentationKind,
) -> Result<RepresentationSet> {
    Ok(extract_many(model, samples, &[kind])?.remove(0))
}

pub fn write_representations(set: &RepresentationSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "sample_id,vector_index")?;
    for i in 0..set.dim {
        write!(w, ",v{i}")?;
    }
    writeln!(w)?;
    for s in &set.samples {
        for (vi, v) in s.vectors.iter().enumerate() {
            write!(w, "{},{vi}", s.id)?;
            for x in v {
                // shortest representation that round-trips exactly
                write!(w, ",{x:?}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_representations(path: &Path, kind: RepresentationKind) -> Result<RepresentationSet> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let malformed = |line: usize, message: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| malformed(1, "missing header".into()))?;
    let dim = header.split(',').count().saturating_sub(2);
    let mut set = RepresentationSet {
        kind,
        dim,
        samples: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let mut fields = line.split(',');
        let id: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed(lineno, "bad sample_id".into()))?;
        let _index: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| malformed(lineno, "bad vector_index".into()))?;
        let v: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(lineno, e.to_string()))?;
        if v.len() != dim {
            return Err(malformed(lineno, format!("expected {dim} values, got {}", v.len())));
        }
        match set.samples.last_mut() {
            Some(last) if last.id == id => last.vectors.push(v),
            _ => set.samples.push(SampleVectors {
                id,
                vectors: vec![v],
            }),
        }
    }
    Ok(set)
}

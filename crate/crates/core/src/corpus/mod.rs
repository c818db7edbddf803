//! Code-summarization samples: loading, synthesis, tokenization, vocabularies
//! and index encoding.

mod synthetic;
mod tokenize;
mod vocab;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use synthetic::{generate_synthetic, TEMPLATE_COUNT};
pub use tokenize::{subtokenize, tokenize};
pub use vocab::{build_vocab, encode, EncodedSample, Vocabulary, BOS, DEFAULT_MAX_LEN, EOS, PAD, UNK};

/// One method body with its name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSample {
    pub id: u64,
    /// Source text; kept so that datasets can be written back out.
    pub code: String,
    pub code_tokens: Vec<String>,
    /// Lowercase subtokens of the method name.
    pub name_subtokens: Vec<String>,
    /// Ground truth. Only evaluation code may read this.
    pub is_poisoned: bool,
    pub origin_id: Option<u64>,
}

impl CodeSample {
    /// Builds a clean sample by tokenizing `code` and subtokenizing `name`.
    pub fn new(id: u64, code: impl Into<String>, name: &str) -> Self {
        let code = code.into();
        CodeSample {
            id,
            code_tokens: tokenize(&code),
            code,
            name_subtokens: subtokenize(name),
            is_poisoned: false,
            origin_id: None,
        }
    }

    /// The label rendered as a snake_case identifier.
    pub fn name(&self) -> String {
        self.name_subtokens.join("_")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<CodeSample>,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<CodeSample>, split: Split) -> Self {
        Dataset { samples, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids_unique(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.samples.len());
        self.samples.iter().all(|s| seen.insert(s.id))
    }

    pub fn next_id(&self) -> u64 {
        self.samples.iter().map(|s| s.id + 1).max().unwrap_or(0)
    }

    pub fn poisoned_ids(&self) -> Vec<u64> {
        self.samples
            .iter()
            .filter(|s| s.is_poisoned)
            .map(|s| s.id)
            .collect()
    }

    pub fn poisoned_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.is_poisoned).count() as f64 / self.samples.len() as f64
    }

    /// Removes the first `n` samples into a new dataset of split `split`.
    pub fn split_off_front(&mut self, n: usize, split: Split) -> Dataset {
        let n = n.min(self.samples.len());
        let rest = self.samples.split_off(n);
        let front = std::mem::replace(&mut self.samples, rest);
        Dataset::new(front, split)
    }

    /// Copy without the samples whose ids are in `removed`.
    pub fn without(&self, removed: &HashSet<u64>) -> Dataset {
        Dataset::new(
            self.samples
                .iter()
                .filter(|s| !removed.contains(&s.id))
                .cloned()
                .collect(),
            self.split,
        )
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    code: String,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: u64,
    code: String,
    name: String,
    #[serde(default)]
    is_poisoned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin_id: Option<u64>,
}

/// Outcome of [`load_jsonl`].
#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Records skipped because their name had no subtokens.
    pub skipped_empty_names: usize,
}

/// Loads an external corpus: one JSON object per line with string fields
/// `code` and `name`. Other fields are ignored; ids are assigned in order.
pub fn load_jsonl(path: &Path, split: Split) -> Result<Loaded> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let sample = CodeSample::new(samples.len() as u64, raw.code, &raw.name);
        if sample.name_subtokens.is_empty() {
            skipped += 1;
            continue;
        }
        samples.push(sample);
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} records with empty names", path.display());
    }
    Ok(Loaded {
        dataset: Dataset::new(samples, split),
        skipped_empty_names: skipped,
    })
}

/// Reads a dataset written by [`write_dataset`], keeping ids and ground truth.
pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if rec.is_poisoned && rec.origin_id.is_none() {
            return Err(malformed("poisoned record without origin_id".into()));
        }
        let mut sample = CodeSample::new(rec.id, rec.code, &rec.name);
        if sample.name_subtokens.is_empty() {
            return Err(malformed("empty name".into()));
        }
        sample.is_poisoned = rec.is_poisoned;
        sample.origin_id = rec.origin_id;
        samples.push(sample);
    }
    let dataset = Dataset::new(samples, split);
    if !dataset.ids_unique() {
        return Err(Error::MalformedLine {
            path: path.to_owned(),
            line: 0,
            message: "duplicate sample ids".into(),
        });
    }
    Ok(dataset)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in &dataset.samples {
        let rec = Record {
            id: s.id,
            code: s.code.clone(),
            name: s.name(),
            is_poisoned: s.is_poisoned,
            origin_id: s.origin_id,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_single_word_and_camel_names() {
        let f = write(&[
            r#"{"code":"def f(x):\n  return x*x","name":"square"}"#,
            r#"{"code":"def f(k):\n  pass","name":"createEntry"}"#,
        ]);
        let loaded = load_jsonl(f.path(), Split::Train).unwrap();
        let ds = loaded.dataset;
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].name_subtokens, vec!["square"]);
        assert_eq!(ds.samples[1].name_subtokens, vec!["create", "entry"]);
        assert_eq!(ds.samples[1].id, 1);
        assert!(!ds.samples[0].is_poisoned);
        assert_eq!(
            ds.samples[0].code_tokens,
            vec!["def", "f", "(", "x", ")", ":", "return", "x", "*", "x"]
        );
    }

    #[test]
    fn malformed_line_is_named() {
        let f = write(&[
            r#"{"code":"a","name":"one"}"#,
            r#"{"code":"b","name":"two"}"#,
            r#"{"code":"c","name":"three"}"#,
            r#"{"code":"d", "name": }"#,
        ]);
        match load_jsonl(f.path(), Split::Train) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected malformed line error, got {other:?}"),
        }
    }

    #[test]
    fn empty_names_are_skipped_and_counted() {
        let f = write(&[
            r#"{"code":"a","name":""}"#,
            r#"{"code":"b","name":"ok"}"#,
            r#"{"code":"c","name":"__"}"#,
        ]);
        let loaded = load_jsonl(f.path(), Split::Train).unwrap();
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.skipped_empty_names, 2);
        assert_eq!(loaded.dataset.samples[0].id, 0);
    }

    #[test]
    fn dataset_file_keeps_ground_truth() {
        let mut poisoned = CodeSample::new(7, "def f():\n  return 1", "create_entry");
        poisoned.is_poisoned = true;
        poisoned.origin_id = Some(3);
        let ds = Dataset::new(
            vec![CodeSample::new(3, "def f():\n  return 1", "getOne"), poisoned],
            Split::Train,
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, f.path()).unwrap();
        let back = read_dataset(f.path(), Split::Train).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn split_off_front_partitions() {
        let mut ds = generate_synthetic(10, 1);
        let front = ds.split_off_front(3, Split::Test);
        assert_eq!(front.len(), 3);
        assert_eq!(ds.len(), 7);
        assert_eq!(front.samples[0].id, 0);
        assert_eq!(ds.samples[0].id, 3);
    }
}

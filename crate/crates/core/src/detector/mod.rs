//! Spectral-signature outlier detection over learned representations.
//!
//! Vectors are centered, projected onto the top right singular directions of
//! the centered matrix, and each training sample is scored by the size of its
//! projection. The highest-scoring `⌊1.5·ε·n⌋` samples are removed.

mod svd;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::model::{RepresentationKind, RepresentationSet};
use crate::{Error, Result};

pub use svd::{top_k_singular, SingularBasis, SvdOptions};

/// Default number of singular directions.
pub const DEFAULT_K: usize = 10;

/// Representation vectors minus their mean, with the owning sample of each
/// row.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredMatrix {
    pub rows: Matrix,
    pub mean: Vec<f64>,
    pub row_owner: Vec<u64>,
}

impl CenteredMatrix {
    /// Centers `rows` (one vector per row) owned by `row_owner`.
    pub fn new(mut rows: Matrix, row_owner: Vec<u64>) -> Result<CenteredMatrix> {
        if rows.rows < 2 {
            return Err(Error::InvalidConfig(format!(
                "centering needs at least two vectors, got {}",
                rows.rows
            )));
        }
        if row_owner.len() != rows.rows {
            return Err(Error::LengthMismatch(rows.rows, row_owner.len()));
        }
        let mut mean = vec![0.0; rows.cols];
        for i in 0..rows.rows {
            for (m, x) in mean.iter_mut().zip(rows.row(i)) {
                *m += x;
            }
        }
        let n = rows.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        for i in 0..rows.rows {
            for (x, m) in rows.row_mut(i).iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        Ok(CenteredMatrix {
            rows,
            mean,
            row_owner,
        })
    }
}

/// Centers every vector of `reps`; multi-vector kinds contribute each of
/// their vectors.
pub fn center(reps: &RepresentationSet) -> Result<CenteredMatrix> {
    for s in &reps.samples {
        if let Some(v) = s.vectors.iter().find(|v| v.len() != reps.dim) {
            return Err(Error::DimensionMismatch(format!(
                "sample {} has a vector of length {}, expected {}",
                s.id,
                v.len(),
                reps.dim
            )));
        }
    }
    let (rows, owners) = reps.stacked();
    CenteredMatrix::new(rows, owners)
}

/// `((row)·v)²` per row.
pub fn score_alg1(m: &CenteredMatrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows.rows)
        .map(|i| {
            let p = dot(m.rows.row(i), v);
            p * p
        })
        .collect()
}

/// Squared length of each row's projection onto the first `k` basis vectors.
pub fn projection_energy(m: &CenteredMatrix, basis: &SingularBasis, k: usize) -> Vec<f64> {
    (0..m.rows.rows)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let p = dot(m.rows.row(i), basis.vector(j));
                    p * p
                })
                .sum()
        })
        .collect()
}

/// `‖(row)·Vᵀ‖₂` per row over all vectors of `basis`.
pub fn score_topk(m: &CenteredMatrix, basis: &SingularBasis) -> Vec<f64> {
    projection_energy(m, basis, basis.k())
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Maximum row score per sample, in order of first appearance.
pub fn aggregate_per_sample(scores: &[f64], row_owner: &[u64]) -> Result<Vec<(u64, f64)>> {
    if scores.len() != row_owner.len() {
        return Err(Error::LengthMismatch(scores.len(), row_owner.len()));
    }
    let mut order = Vec::new();
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for (&s, &id) in scores.iter().zip(row_owner) {
        best.entry(id)
            .and_modify(|b| *b = b.max(s))
            .or_insert_with(|| {
                order.push(id);
                s
            });
    }
    Ok(order.into_iter().map(|id| (id, best[&id])).collect())
}

/// Like [`aggregate_per_sample`] but fails on any id in `expected` that owns
/// no rows.
pub fn aggregate_expected(
    scores: &[f64],
    row_owner: &[u64],
    expected: &[u64],
) -> Result<Vec<(u64, f64)>> {
    let agg = aggregate_per_sample(scores, row_owner)?;
    let present: HashSet<u64> = agg.iter().map(|(id, _)| *id).collect();
    if let Some(&missing) = expected.iter().find(|id| !present.contains(id)) {
        return Err(Error::EmptySample(missing));
    }
    Ok(agg)
}

/// Sorts by descending score, ties by ascending id.
pub fn rank(scores: &[(u64, f64)]) -> Vec<(u64, f64)> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// `⌊1.5·ε·n⌋`, guarded against `1.5·ε·n` landing just below an integer.
pub fn removal_count(epsilon: f64, n: usize) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "assumed epsilon must be in (0, 0.5), got {epsilon}"
        )));
    }
    let count = (1.5 * epsilon * n as f64 + 1e-9).floor() as usize;
    if count >= n {
        return Err(Error::RemovalTooLarge { count, n });
    }
    Ok(count)
}

/// Ids of the `⌊1.5·ε·n⌋` highest-scoring samples (ties to lower ids).
pub fn remove_top(scores: &[(u64, f64)], epsilon: f64) -> Result<Vec<u64>> {
    let count = removal_count(epsilon, scores.len())?;
    Ok(rank(scores).into_iter().take(count).map(|(id, _)| id).collect())
}

/// Fraction of `poisoned` contained in `removed`; `None` if there are no
/// poisoned samples.
pub fn recall(removed: &[u64], poisoned: &HashSet<u64>) -> Option<f64> {
    if poisoned.is_empty() {
        return None;
    }
    let hit = removed.iter().filter(|id| poisoned.contains(id)).count();
    Some(hit as f64 / poisoned.len() as f64)
}

/// Empirical `Pr_clean[(x−μ)·v > t]` and `Pr_poison[(x−μ)·v < t]`.
pub fn separability_probe(
    clean: &[Vec<f64>],
    poison: &[Vec<f64>],
    mean: &[f64],
    v: &[f64],
    t: f64,
) -> (f64, f64) {
    let proj = |x: &Vec<f64>| -> f64 { x.iter().zip(mean).zip(v).map(|((a, m), b)| (a - m) * b).sum() };
    let frac = |xs: &[Vec<f64>], pred: &dyn Fn(f64) -> bool| -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        xs.iter().filter(|x| pred(proj(x))).count() as f64 / xs.len() as f64
    };
    (frac(clean, &|p| p > t), frac(poison, &|p| p < t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Squared projection onto the top singular vector only.
    Alg1,
    /// Norm of the projection onto the top-k singular vectors.
    #[default]
    TopK,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleScore {
    pub id: u64,
    pub score: f64,
    /// 1-based position in the descending ranking.
    pub rank: usize,
    pub removed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_poisoned: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectionSummary {
    pub kind: RepresentationKind,
    pub k: usize,
    pub mode: ScoreMode,
    pub epsilon: f64,
    pub n: usize,
    pub removed: usize,
    pub singular_values: Vec<f64>,
    /// `None` when ground truth has no poisoned samples.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    /// In ranking order.
    pub samples: Vec<SampleScore>,
    pub summary: DetectionSummary,
}

impl OutlierReport {
    pub fn removed_ids(&self) -> Vec<u64> {
        self.samples.iter().filter(|s| s.removed).map(|s| s.id).collect()
    }

    /// One JSON object per sample, then the summary object.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &serde_json::json!({ "summary": &self.summary }))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<OutlierReport> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut samples = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |e: serde_json::Error| Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            };
            let value: serde_json::Value = serde_json::from_str(line).map_err(malformed)?;
            if let Some(s) = value.get("summary") {
                summary = Some(serde_json::from_value(s.clone()).map_err(malformed)?);
            } else {
                samples.push(serde_json::from_value(value).map_err(malformed)?);
            }
        }
        let summary = summary.ok_or_else(|| Error::MalformedLine {
            path: path.to_path_buf(),
            line: text.lines().count(),
            message: "missing summary record".into(),
        })?;
        Ok(OutlierReport { samples, summary })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub k: usize,
    pub epsilon: f64,
    pub mode: ScoreMode,
    pub svd: SvdOptions,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            k: DEFAULT_K,
            epsilon: 0.05,
            mode: ScoreMode::TopK,
            svd: SvdOptions::default(),
        }
    }
}

/// Full detection pass over `reps`. `poisoned` is ground truth used only to
/// annotate the report and compute recall.
pub fn detect(
    reps: &RepresentationSet,
    opts: &DetectOptions,
    poisoned: Option<&HashSet<u64>>,
) -> Result<OutlierReport> {
    let centered = center(reps)?;
    let k = match opts.mode {
        ScoreMode::Alg1 => 1,
        ScoreMode::TopK => opts.k,
    };
    let basis = top_k_singular(&centered.rows, k, &opts.svd)?;
    let ids: Vec<u64> = reps.samples.iter().map(|s| s.id).collect();
    // both modes rank on squared projections; with k = 1 they coincide exactly
    let energy = projection_energy(&centered, &basis, k);
    let per_sample = aggregate_expected(&energy, &centered.row_owner, &ids)?;
    let count = removal_count(opts.epsilon, per_sample.len())?;
    let ranked = rank(&per_sample);
    let samples: Vec<SampleScore> = ranked
        .iter()
        .enumerate()
        .map(|(i, &(id, e))| SampleScore {
            id,
            score: match opts.mode {
                ScoreMode::Alg1 => e,
                ScoreMode::TopK => e.sqrt(),
            },
            rank: i + 1,
            removed: i < count,
            is_poisoned: poisoned.map(|p| p.contains(&id)),
        })
        .collect();
    let removed: Vec<u64> = samples[..count].iter().map(|s| s.id).collect();
    let summary = DetectionSummary {
        kind: reps.kind,
        k,
        mode: opts.mode,
        epsilon: opts.epsilon,
        n: samples.len(),
        removed: count,
        singular_values: basis.singular_values.clone(),
        recall: poisoned.and_then(|p| recall(&removed, p)),
    };
    Ok(OutlierReport { samples, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleVectors;

    fn set(vectors: Vec<Vec<Vec<f64>>>) -> RepresentationSet {
        RepresentationSet {
            kind: RepresentationKind::ContextVectors,
            dim: vectors[0][0].len(),
            samples: vectors
                .into_iter()
                .enumerate()
                .map(|(i, vectors)| SampleVectors {
                    id: i as u64,
                    vectors,
                })
                .collect(),
        }
    }

    #[test]
    fn centering_examples() {
        let c = center(&set(vec![vec![vec![1.0, 3.0]], vec![vec![3.0, 1.0]]])).unwrap();
        assert_eq!(c.mean, vec![2.0, 2.0]);
        assert_eq!(c.rows.data, vec![-1.0, 1.0, 1.0, -1.0]);
        let same = center(&set(vec![vec![vec![5.0, 5.0]]; 4])).unwrap();
        assert!(same.rows.data.iter().all(|&x| x == 0.0));
        assert!(center(&set(vec![vec![vec![1.0]]])).is_err());
        let ragged = set(vec![vec![vec![1.0, 2.0]], vec![vec![1.0]]]);
        assert!(matches!(center(&ragged), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn score_examples() {
        let m = CenteredMatrix {
            rows: Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 5.0], vec![3.0, 4.0]]),
            mean: vec![0.0, 0.0],
            row_owner: vec![0, 1, 2],
        };
        assert_eq!(score_alg1(&m, &[1.0, 0.0]), vec![4.0, 0.0, 9.0]);
        assert_eq!(score_alg1(&m, &[-1.0, 0.0]), vec![4.0, 0.0, 9.0]);
        let basis = SingularBasis {
            vectors: Matrix::identity(2),
            singular_values: vec![1.0, 1.0],
        };
        assert_eq!(score_topk(&m, &basis)[2], 5.0);
    }

    #[test]
    fn aggregation_takes_the_max() {
        let agg = aggregate_per_sample(&[1.0, 7.0, 2.0, 3.0], &[4, 4, 4, 9]).unwrap();
        assert_eq!(agg, vec![(4, 7.0), (9, 3.0)]);
        assert!(matches!(
            aggregate_expected(&[1.0], &[4], &[4, 5]),
            Err(Error::EmptySample(5))
        ));
    }

    #[test]
    fn removal_counts_and_ties() {
        assert_eq!(removal_count(0.05, 1000).unwrap(), 75);
        assert_eq!(removal_count(0.01, 10).unwrap(), 0);
        assert!(removal_count(0.0, 10).is_err());
        assert!(removal_count(0.5, 10).is_err());
        let scores = vec![(7, 1.0), (3, 2.0), (5, 2.0), (1, 0.5)];
        // 1.5 * 0.2 * 4 = 1.2 -> one removal, tie between ids 3 and 5
        assert_eq!(remove_top(&scores, 0.2).unwrap(), vec![3]);
    }

    #[test]
    fn recall_examples() {
        let poisoned: HashSet<u64> = (0..50).collect();
        let removed: Vec<u64> = (0..45).chain(100..130).collect();
        assert_eq!(recall(&removed, &poisoned), Some(0.9));
        assert_eq!(recall(&[], &poisoned), Some(0.0));
        assert_eq!(recall(&[1, 2], &HashSet::new()), None);
    }

    #[test]
    fn probe_limits() {
        let clean = vec![vec![0.0], vec![0.1], vec![-0.1]];
        let poison = vec![vec![5.0], vec![5.2]];
        let (tail, head) = separability_probe(&clean, &poison, &[0.0], &[1.0], 2.5);
        assert_eq!((tail, head), (0.0, 0.0));
        let (tail, head) = separability_probe(&clean, &poison, &[0.0], &[1.0], f64::INFINITY);
        assert_eq!((tail, head), (0.0, 1.0));
    }

    #[test]
    fn report_round_trip() {
        let reps = set((0..20).map(|i| vec![vec![i as f64, (i * i) as f64 % 7.0]]).collect());
        let poisoned: HashSet<u64> = [19, 18].into_iter().collect();
        let opts = DetectOptions {
            k: 2,
            epsilon: 0.1,
            ..DetectOptions::default()
        };
        let report = detect(&reps, &opts, Some(&poisoned)).unwrap();
        assert_eq!(report.summary.removed, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detect.jsonl");
        report.write_jsonl(&path).unwrap();
        assert_eq!(OutlierReport::read_jsonl(&path).unwrap(), report);
    }
}

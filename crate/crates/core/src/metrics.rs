//! Subtoken F1 for name prediction and backdoor success rate.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backdoor::{insert_trigger, BackdoorSpec, TargetKind, TriggerGrammar};
use crate::corpus::{encode, CodeSample, Dataset, Vocabulary};
use crate::model::Seq2Seq;
use crate::{seed, Error, Result};

/// Anything that maps a code sample to a predicted name.
pub trait Summarizer {
    fn summarize(&self, sample: &CodeSample) -> Result<Vec<String>>;
}

/// A trained model together with the vocabularies it was trained with.
pub struct ModelSummarizer<'a> {
    pub model: &'a Seq2Seq,
    pub input_vocab: &'a Vocabulary,
    pub output_vocab: &'a Vocabulary,
    pub max_input_len: usize,
}

impl Summarizer for ModelSummarizer<'_> {
    fn summarize(&self, sample: &CodeSample) -> Result<Vec<String>> {
        let encoded = encode(sample, self.input_vocab, self.output_vocab, self.max_input_len);
        let predicted = self.model.predict(&encoded.input)?;
        Ok(self.output_vocab.decode(&predicted))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn lowered(tokens: &[String]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.to_lowercase()).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level subtoken precision, recall and F1 with per-sample multiset
/// matching, ignoring case.
pub fn subtoken_f1(predictions: &[Vec<String>], references: &[Vec<String>]) -> Result<PrecisionRecall> {
    if predictions.len() != references.len() {
        return Err(Error::LengthMismatch(predictions.len(), references.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, r) in predictions.iter().zip(references) {
        let pc = lowered(p);
        let rc = lowered(r);
        let hit: usize = pc
            .iter()
            .map(|(t, &c)| c.min(rc.get(t).copied().unwrap_or(0)))
            .sum();
        tp += hit;
        fp += p.len() - hit;
        fn_ += r.len() - hit;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// Inserts a trigger into every test sample. Grammatical triggers are drawn
/// per sample from an RNG stream keyed by position.
pub fn trigger_test_set(test: &Dataset, spec: &BackdoorSpec, trigger_seed: u64) -> Result<Vec<CodeSample>> {
    let grammar = TriggerGrammar::default();
    test.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = seed::indexed_rng(trigger_seed, i as u64);
            let snippet = spec.trigger(&grammar, &mut rng)?;
            Ok(insert_trigger(s, &snippet).sample)
        })
        .collect()
}

fn same_tokens(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.eq_ignore_ascii_case(y))
}

fn success_rate(
    spec: &BackdoorSpec,
    clean_predictions: Option<&[Vec<String>]>,
    triggered_predictions: &[Vec<String>],
) -> f64 {
    let hits = triggered_predictions
        .iter()
        .enumerate()
        .filter(|(i, pred)| match spec.target_kind {
            TargetKind::Static => same_tokens(pred, &spec.static_target),
            TargetKind::Dynamic => {
                let clean = &clean_predictions.expect("dynamic targets need clean predictions")[*i];
                pred.first()
                    .is_some_and(|first| first.eq_ignore_ascii_case(&spec.dynamic_prefix))
                    && same_tokens(&pred[1..], clean)
            }
        })
        .count();
    hits as f64 / triggered_predictions.len() as f64
}

/// Fraction of triggered test inputs on which `model` outputs the target.
/// Dynamic targets are judged against the model's own clean prediction.
pub fn backdoor_success_rate(
    model: &dyn Summarizer,
    test: &Dataset,
    spec: &BackdoorSpec,
    trigger_seed: u64,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let clean = match spec.target_kind {
        TargetKind::Static => None,
        TargetKind::Dynamic => Some(predict_all(model, &test.samples)?),
    };
    let triggered = predict_all(model, &trigger_test_set(test, spec, trigger_seed)?)?;
    Ok(success_rate(spec, clean.as_deref(), &triggered))
}

pub fn predict_all(model: &dyn Summarizer, samples: &[CodeSample]) -> Result<Vec<Vec<String>>> {
    samples.iter().map(|s| model.summarize(s)).collect()
}

/// Clean-data quality and backdoor success of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub bd_rate: f64,
    pub n_test: usize,
}

pub fn evaluate_model(
    model: &dyn Summarizer,
    test: &Dataset,
    spec: &BackdoorSpec,
    trigger_seed: u64,
) -> Result<ModelEval> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let clean = predict_all(model, &test.samples)?;
    let references: Vec<Vec<String>> = test.samples.iter().map(|s| s.name_subtokens.clone()).collect();
    let prf = subtoken_f1(&clean, &references)?;
    let triggered = predict_all(model, &trigger_test_set(test, spec, trigger_seed)?)?;
    Ok(ModelEval {
        f1: prf.f1,
        precision: prf.precision,
        recall: prf.recall,
        bd_rate: success_rate(spec, Some(&clean), &triggered),
        n_test: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_f1: f64,
    pub precision: f64,
    /// Subtoken recall of the name predictions (not detector recall).
    pub recall_metric: f64,
    pub bd_rate: f64,
    pub post_test_f1: f64,
    pub post_bd_rate: f64,
    pub n_test: usize,
    /// Fraction of poisoned training samples removed by the detector.
    pub detector_recall: Option<f64>,
    pub removed: usize,
}

/// Evaluates the model trained on the (possibly poisoned) data and the one
/// retrained after removal on the same test set.
pub fn full_evaluation(
    trained: &dyn Summarizer,
    retrained: &dyn Summarizer,
    test: &Dataset,
    spec: &BackdoorSpec,
    trigger_seed: u64,
) -> Result<EvalReport> {
    let pre = evaluate_model(trained, test, spec, trigger_seed)?;
    let post = evaluate_model(retrained, test, spec, trigger_seed)?;
    Ok(EvalReport::from_parts(&pre, &post))
}

impl EvalReport {
    pub fn from_parts(pre: &ModelEval, post: &ModelEval) -> EvalReport {
        EvalReport {
            test_f1: pre.f1,
            precision: pre.precision,
            recall_metric: pre.recall,
            bd_rate: pre.bd_rate,
            post_test_f1: post.f1,
            post_bd_rate: post.bd_rate,
            n_test: pre.n_test,
            detector_recall: None,
            removed: 0,
        }
    }
}

/// One row of the cross-experiment ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub run: String,
    pub trigger: String,
    pub target: String,
    pub epsilon: f64,
    pub k: usize,
    pub kind: String,
    pub seed: u64,
    pub report: EvalReport,
}

const LEDGER_HEADER: &str = "run,trigger,target,epsilon,k,kind,seed,test_f1,precision,recall_metric,bd_rate,post_test_f1,post_bd_rate,detector_recall,removed,n_test";

/// Appends `row` to the CSV ledger at `path`, writing the header first if
/// the file is new.
pub fn append_ledger(path: &Path, row: &LedgerRow) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{LEDGER_HEADER}")?;
    }
    let r = &row.report;
    let recall = r.detector_recall.map_or_else(|| "NA".to_string(), |x| x.to_string());
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.run.replace(',', ";"),
        row.trigger,
        row.target,
        row.epsilon,
        row.k,
        row.kind,
        row.seed,
        r.test_f1,
        r.precision,
        r.recall_metric,
        r.bd_rate,
        r.post_test_f1,
        r.post_bd_rate,
        recall,
        r.removed,
        r.n_test
    )?;
    Ok(())
}

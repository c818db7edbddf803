//! File-based experiment stages.
//!
//! Every stage reads its inputs from the run directory, writes its outputs
//! there, and records a `<stage>.manifest.json` with the inputs, a hash of
//! the configuration sections the stage depends on, the seed and the wall
//! time. A stage refuses to consume an upstream artifact whose manifest hash
//! disagrees with the current configuration.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backdoor::{poison_dataset, BackdoorSpec};
use crate::corpus::{
    build_vocab, encode, generate_synthetic, load_jsonl, read_dataset, write_dataset, Dataset,
    EncodedSample, Split, Vocabulary, DEFAULT_MAX_LEN,
};
use crate::detector::{
    self, center, projection_energy, aggregate_expected, top_k_singular, DetectOptions, OutlierReport,
    ScoreMode, SvdOptions, DEFAULT_K,
};
use crate::metrics::{append_ledger, evaluate_model, EvalReport, LedgerRow, ModelSummarizer};
use crate::model::{
    extract_representations, load_checkpoint, read_representations, save_checkpoint, train,
    write_representations, ModelConfig, RepresentationKind, RepresentationSet, Seq2Seq, TrainLog,
};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorpusSource {
    Synthetic { train: usize, test: usize },
    /// JSONL files with `code` and `name` fields.
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    pub max_input_len: usize,
    pub input_vocab_cap: usize,
    pub output_vocab_cap: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            source: CorpusSource::Synthetic {
                train: 5000,
                test: 500,
            },
            max_input_len: DEFAULT_MAX_LEN,
            input_vocab_cap: 5000,
            output_vocab_cap: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub k: usize,
    /// Poisoning rate the defender assumes; defaults to the attack's ε.
    pub epsilon_assumed: Option<f64>,
    pub representation: RepresentationKind,
    pub score: ScoreMode,
    pub k_sweep: Vec<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            k: DEFAULT_K,
            epsilon_assumed: None,
            representation: RepresentationKind::EncoderOutput,
            score: ScoreMode::TopK,
            k_sweep: (1..=20).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// An `epsilon` of zero disables poisoning and detection.
    pub backdoor: BackdoorSpec,
    /// Vocabulary sizes and the seed are filled in by the pipeline.
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            corpus: CorpusConfig::default(),
            backdoor: BackdoorSpec::default(),
            model: ModelConfig::default(),
            detector: DetectorConfig::default(),
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Pipeline stages, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Corpus,
    Poison,
    Train,
    Extract,
    Detect,
    Retrain,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "gen-corpus",
            Stage::Poison => "poison",
            Stage::Train => "train",
            Stage::Extract => "extract",
            Stage::Detect => "detect",
            Stage::Retrain => "retrain",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_secs: f64,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backdoor.epsilon != 0.0 {
            self.backdoor.validate()?;
        }
        if let Some(e) = self.detector.epsilon_assumed {
            if !(e > 0.0 && e < 0.5) {
                return Err(Error::InvalidConfig(format!("epsilon_assumed {e} outside (0, 0.5)")));
            }
        }
        if self.detector.k == 0 {
            return Err(Error::InvalidConfig("detector k must be at least 1".into()));
        }
        if self.corpus.max_input_len == 0 {
            return Err(Error::InvalidConfig("max_input_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn poisoning_enabled(&self) -> bool {
        self.backdoor.epsilon > 0.0
    }

    pub fn epsilon_assumed(&self) -> f64 {
        self.detector.epsilon_assumed.unwrap_or(self.backdoor.epsilon)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    /// Hash of the configuration sections `stage` depends on.
    pub fn hash_for(&self, stage: Stage) -> String {
        let mut scope = serde_json::Map::new();
        scope.insert("seed".into(), serde_json::json!(self.seed));
        scope.insert("corpus".into(), serde_json::to_value(&self.corpus).expect("serializable"));
        if stage >= Stage::Poison {
            scope.insert("backdoor".into(), serde_json::to_value(&self.backdoor).expect("serializable"));
        }
        if stage >= Stage::Train {
            scope.insert("model".into(), serde_json::to_value(&self.model).expect("serializable"));
        }
        if stage >= Stage::Detect {
            scope.insert("detector".into(), serde_json::to_value(&self.detector).expect("serializable"));
        }
        let bytes = serde_json::to_vec(&serde_json::Value::Object(scope)).expect("serializable");
        hex::encode(Sha256::digest(&bytes))
    }

    fn model_config(&self, input_vocab: usize, output_vocab: usize) -> ModelConfig {
        ModelConfig {
            input_vocab,
            output_vocab,
            seed: seed::derive(self.seed, "init"),
            ..self.model.clone()
        }
    }
}

fn manifest_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.path(&format!("{name}.manifest.json"))
}

fn write_manifest(
    cfg: &ExperimentConfig,
    stage: Stage,
    name: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    seed: u64,
    started: Instant,
    details: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        stage: name.to_string(),
        inputs: inputs.to_vec(),
        outputs: outputs.to_vec(),
        config_hash: cfg.hash_for(stage),
        seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
        details,
    };
    fs::write(manifest_path(cfg, name), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(cfg: &ExperimentConfig, name: &str) -> Result<Manifest> {
    let path = manifest_path(cfg, name);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
}

/// Returns the path of `file` produced by `stage`, after checking that it
/// exists and that its manifest matches the current configuration.
fn require(cfg: &ExperimentConfig, stage: Stage, manifest: &str, file: &str) -> Result<PathBuf> {
    let path = cfg.path(file);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let m = read_manifest(cfg, manifest)?;
    let current = cfg.hash_for(stage);
    if m.config_hash != current {
        return Err(Error::ConfigHashMismatch {
            artifact: path.display().to_string(),
            recorded: m.config_hash,
            current,
        });
    }
    Ok(path)
}

fn prepare(cfg: &ExperimentConfig) -> Result<Instant> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(Instant::now())
}

/// Writes `dataset.jsonl` (train) and `test.jsonl`.
pub fn cmd_gen_corpus(cfg: &ExperimentConfig) -> Result<()> {
    let started = prepare(cfg)?;
    let corpus_seed = seed::derive(cfg.seed, "corpus");
    let (train, test, inputs) = match &cfg.corpus.source {
        CorpusSource::Synthetic { train, test } => {
            let mut all = generate_synthetic(train + test, corpus_seed);
            let train_set = all.split_off_front(*train, Split::Train);
            all.split = Split::Test;
            (train_set, all, vec![])
        }
        CorpusSource::Files { train, test } => {
            let tr = load_jsonl(train, Split::Train)?.dataset;
            let te = load_jsonl(test, Split::Test)?.dataset;
            (tr, te, vec![train.clone(), test.clone()])
        }
    };
    let (train_path, test_path) = (cfg.path("dataset.jsonl"), cfg.path("test.jsonl"));
    write_dataset(&train, &train_path)?;
    write_dataset(&test, &test_path)?;
    log::info!("corpus: {} train, {} test samples", train.len(), test.len());
    write_manifest(
        cfg,
        Stage::Corpus,
        Stage::Corpus.name(),
        &inputs,
        &[train_path, test_path],
        corpus_seed,
        started,
        serde_json::json!({ "train": train.len(), "test": test.len() }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonSummary {
    pub enabled: bool,
    pub copies: usize,
    pub realized_epsilon: f64,
    pub unplaced_triggers: usize,
}

/// Writes `poisoned.jsonl`: the training set with poisoned copies appended.
/// With ε = 0 it is a plain copy of the training set.
pub fn cmd_poison(cfg: &ExperimentConfig) -> Result<PoisonSummary> {
    let started = prepare(cfg)?;
    let input = require(cfg, Stage::Corpus, Stage::Corpus.name(), "dataset.jsonl")?;
    let train = read_dataset(&input, Split::Train)?;
    let poison_seed = seed::derive(cfg.seed, "poison");
    let (dataset, summary) = if cfg.poisoning_enabled() {
        let outcome = poison_dataset(&train, &cfg.backdoor, poison_seed)?;
        let summary = PoisonSummary {
            enabled: true,
            copies: outcome.copies,
            realized_epsilon: outcome.realized_epsilon,
            unplaced_triggers: outcome.unplaced_triggers,
        };
        (outcome.dataset, summary)
    } else {
        let summary = PoisonSummary {
            enabled: false,
            copies: 0,
            realized_epsilon: 0.0,
            unplaced_triggers: 0,
        };
        (train, summary)
    };
    let out = cfg.path("poisoned.jsonl");
    write_dataset(&dataset, &out)?;
    log::info!(
        "poison: {} copies, realized epsilon {:.4}",
        summary.copies,
        summary.realized_epsilon
    );
    write_manifest(
        cfg,
        Stage::Poison,
        Stage::Poison.name(),
        &[input],
        &[out],
        poison_seed,
        started,
        serde_json::to_value(&summary)?,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Vocabularies {
    input: Vocabulary,
    output: Vocabulary,
}

fn encode_all(dataset: &Dataset, v: &Vocabularies, max_len: usize) -> Vec<EncodedSample> {
    dataset
        .samples
        .iter()
        .map(|s| encode(s, &v.input, &v.output, max_len))
        .collect()
}

fn train_on(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model_file: &str,
    vocab_file: &str,
) -> Result<(Seq2Seq, TrainLog, [PathBuf; 2])> {
    let (input, output) = build_vocab(data, cfg.corpus.input_vocab_cap, cfg.corpus.output_vocab_cap);
    let vocabs = Vocabularies { input, output };
    let config = cfg.model_config(vocabs.input.len(), vocabs.output.len());
    let mut model = Seq2Seq::new(config)?;
    log::info!(
        "model: {} parameters, vocabularies {} / {}",
        model.parameter_count(),
        vocabs.input.len(),
        vocabs.output.len()
    );
    let encoded = encode_all(data, &vocabs, cfg.corpus.max_input_len);
    let log = train(&mut model, &encoded)?;
    let (model_path, vocab_path) = (cfg.path(model_file), cfg.path(vocab_file));
    save_checkpoint(&model, &model_path)?;
    fs::write(&vocab_path, serde_json::to_string(&vocabs)?)?;
    Ok((model, log, [model_path, vocab_path]))
}

/// Trains on `poisoned.jsonl`; writes `model.ckpt` and `vocab.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainLog> {
    let started = prepare(cfg)?;
    let input = require(cfg, Stage::Poison, Stage::Poison.name(), "poisoned.jsonl")?;
    let data = read_dataset(&input, Split::Train)?;
    let (model, log, outputs) = train_on(cfg, &data, "model.ckpt", "vocab.json")?;
    write_manifest(
        cfg,
        Stage::Train,
        Stage::Train.name(),
        &[input],
        &outputs,
        model.config.seed,
        started,
        serde_json::to_value(&log)?,
    )?;
    Ok(log)
}

fn load_trained(cfg: &ExperimentConfig, stage: Stage, model_file: &str, vocab_file: &str) -> Result<(Seq2Seq, Vocabularies)> {
    let model_path = require(cfg, stage, stage.name(), model_file)?;
    let vocab_path = require(cfg, stage, stage.name(), vocab_file)?;
    let model = load_checkpoint(&model_path)?;
    let vocabs: Vocabularies = serde_json::from_str(&fs::read_to_string(vocab_path)?)?;
    if vocabs.input.len() != model.config.input_vocab || vocabs.output.len() != model.config.output_vocab {
        return Err(Error::DimensionMismatch("vocabulary sizes disagree with checkpoint".into()));
    }
    Ok((model, vocabs))
}

pub fn repr_file(kind: RepresentationKind) -> String {
    format!("reprs-{}.csv", kind.name().replace('_', "-"))
}

fn extract_manifest(kind: RepresentationKind) -> String {
    format!("extract-{}", kind.name().replace('_', "-"))
}

/// Writes `reprs-<kind>.csv` for every training sample.
pub fn cmd_extract(cfg: &ExperimentConfig, kind: RepresentationKind) -> Result<RepresentationSet> {
    let started = prepare(cfg)?;
    let data_path = require(cfg, Stage::Poison, Stage::Poison.name(), "poisoned.jsonl")?;
    let (model, vocabs) = load_trained(cfg, Stage::Train, "model.ckpt", "vocab.json")?;
    let data = read_dataset(&data_path, Split::Train)?;
    let encoded = encode_all(&data, &vocabs, cfg.corpus.max_input_len);
    let set = extract_representations(&model, &encoded, kind)?;
    let out = cfg.path(&repr_file(kind));
    write_representations(&set, &out)?;
    write_manifest(
        cfg,
        Stage::Extract,
        &extract_manifest(kind),
        &[data_path, cfg.path("model.ckpt")],
        &[out],
        0,
        started,
        serde_json::json!({ "kind": kind, "dim": set.dim, "vectors": set.vector_count() }),
    )?;
    Ok(set)
}

fn load_reprs(cfg: &ExperimentConfig, kind: RepresentationKind) -> Result<RepresentationSet> {
    let path = require(cfg, Stage::Extract, &extract_manifest(kind), &repr_file(kind))?;
    read_representations(&path, kind)
}

fn ground_truth(cfg: &ExperimentConfig) -> Result<(Dataset, HashSet<u64>)> {
    let path = require(cfg, Stage::Poison, Stage::Poison.name(), "poisoned.jsonl")?;
    let data = read_dataset(&path, Split::Train)?;
    let poisoned = data.poisoned_ids().into_iter().collect();
    Ok((data, poisoned))
}

/// Scores the configured representation, writes `detect.jsonl` and the
/// training set without the removed samples as `cleaned.jsonl`.
pub fn cmd_detect(cfg: &ExperimentConfig) -> Result<OutlierReport> {
    let started = prepare(cfg)?;
    let kind = cfg.detector.representation;
    let reps = load_reprs(cfg, kind)?;
    let (data, poisoned) = ground_truth(cfg)?;
    let detector_seed = seed::derive(cfg.seed, "detector");
    let opts = DetectOptions {
        k: cfg.detector.k,
        epsilon: cfg.epsilon_assumed(),
        mode: cfg.detector.score,
        svd: SvdOptions {
            seed: detector_seed,
            ..SvdOptions::default()
        },
    };
    let report = detector::detect(&reps, &opts, Some(&poisoned))?;
    let removed: HashSet<u64> = report.removed_ids().into_iter().collect();
    let (detect_path, cleaned_path) = (cfg.path("detect.jsonl"), cfg.path("cleaned.jsonl"));
    report.write_jsonl(&detect_path)?;
    write_dataset(&data.without(&removed), &cleaned_path)?;
    match report.summary.recall {
        Some(r) => log::info!("detect: removed {}, recall {r:.3}", removed.len()),
        None => log::info!("detect: removed {}, no poisoned samples", removed.len()),
    }
    write_manifest(
        cfg,
        Stage::Detect,
        Stage::Detect.name(),
        &[cfg.path(&repr_file(kind)), cfg.path("poisoned.jsonl")],
        &[detect_path, cleaned_path],
        detector_seed,
        started,
        serde_json::to_value(&report.summary)?,
    )?;
    Ok(report)
}

/// Retrains from scratch on `cleaned.jsonl`.
pub fn cmd_retrain(cfg: &ExperimentConfig) -> Result<TrainLog> {
    let started = prepare(cfg)?;
    let input = require(cfg, Stage::Detect, Stage::Detect.name(), "cleaned.jsonl")?;
    let data = read_dataset(&input, Split::Train)?;
    let (model, log, outputs) = train_on(cfg, &data, "model-retrained.ckpt", "vocab-retrained.json")?;
    write_manifest(
        cfg,
        Stage::Retrain,
        Stage::Retrain.name(),
        &[input],
        &outputs,
        model.config.seed,
        started,
        serde_json::to_value(&log)?,
    )?;
    Ok(log)
}

/// Evaluates the trained and (when present) retrained models on the clean
/// test set, writes `eval.json` and appends to `ledger.csv`. Without
/// poisoning the trained model stands in for the retrained one.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let started = prepare(cfg)?;
    let test_path = require(cfg, Stage::Corpus, Stage::Corpus.name(), "test.jsonl")?;
    let test = read_dataset(&test_path, Split::Test)?;
    let trigger_seed = seed::derive(cfg.seed, "test-trigger");
    let spec = &cfg.backdoor;

    let (model, vocabs) = load_trained(cfg, Stage::Train, "model.ckpt", "vocab.json")?;
    let summarizer = ModelSummarizer {
        model: &model,
        input_vocab: &vocabs.input,
        output_vocab: &vocabs.output,
        max_input_len: cfg.corpus.max_input_len,
    };
    let pre = evaluate_model(&summarizer, &test, spec, trigger_seed)?;
    let mut inputs = vec![test_path, cfg.path("model.ckpt")];

    let (post, detector_recall, removed) = if cfg.poisoning_enabled() {
        let (retrained, rv) = load_trained(cfg, Stage::Retrain, "model-retrained.ckpt", "vocab-retrained.json")?;
        let post_summarizer = ModelSummarizer {
            model: &retrained,
            input_vocab: &rv.input,
            output_vocab: &rv.output,
            max_input_len: cfg.corpus.max_input_len,
        };
        let post = evaluate_model(&post_summarizer, &test, spec, trigger_seed)?;
        let detect_path = require(cfg, Stage::Detect, Stage::Detect.name(), "detect.jsonl")?;
        let summary = OutlierReport::read_jsonl(&detect_path)?.summary;
        inputs.push(cfg.path("model-retrained.ckpt"));
        inputs.push(detect_path);
        (post, summary.recall, summary.removed)
    } else {
        (pre, None, 0)
    };
    let mut report = EvalReport::from_parts(&pre, &post);
    report.detector_recall = detector_recall;
    report.removed = removed;

    let eval_path = cfg.path("eval.json");
    fs::write(&eval_path, serde_json::to_string_pretty(&report)?)?;
    let ledger = cfg.path("ledger.csv");
    append_ledger(
        &ledger,
        &LedgerRow {
            run: cfg.out_dir.display().to_string(),
            trigger: format!("{:?}", spec.trigger_kind).to_lowercase(),
            target: format!("{:?}", spec.target_kind).to_lowercase(),
            epsilon: spec.epsilon,
            k: cfg.detector.k,
            kind: cfg.detector.representation.name().to_string(),
            seed: cfg.seed,
            report: report.clone(),
        },
    )?;
    log::info!(
        "eval: f1 {:.3} bd {:.3} | post f1 {:.3} post bd {:.3}",
        report.test_f1,
        report.bd_rate,
        report.post_test_f1,
        report.post_bd_rate
    );
    write_manifest(
        cfg,
        Stage::Eval,
        Stage::Eval.name(),
        &inputs,
        &[eval_path, ledger],
        trigger_seed,
        started,
        serde_json::Value::Null,
    )?;
    Ok(report)
}

/// Writes `hist.csv` with one `score,is_poisoned` row per sample.
pub fn cmd_hist(cfg: &ExperimentConfig) -> Result<PathBuf> {
    prepare(cfg)?;
    let detect_path = require(cfg, Stage::Detect, Stage::Detect.name(), "detect.jsonl")?;
    let report = OutlierReport::read_jsonl(&detect_path)?;
    let out = cfg.path("hist.csv");
    write_hist(&report, &out)?;
    Ok(out)
}

pub fn write_hist(report: &OutlierReport, path: &Path) -> Result<()> {
    let mut text = String::from("score,is_poisoned\n");
    for s in &report.samples {
        let label = s.is_poisoned.ok_or(Error::NoGroundTruth)?;
        text.push_str(&format!("{:?},{}\n", s.score, u8::from(label)));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Recall of top-1.5ε removal for each `k`, reusing one decomposition.
/// Values of `k` beyond the representation's rank bound are skipped.
pub fn k_sweep(
    reps: &RepresentationSet,
    poisoned: &HashSet<u64>,
    ks: &[usize],
    epsilon: f64,
    svd: &SvdOptions,
) -> Result<Vec<(usize, Option<f64>)>> {
    let centered = center(reps)?;
    let max = centered.rows.rows.min(centered.rows.cols);
    let valid: Vec<usize> = ks
        .iter()
        .copied()
        .filter(|&k| {
            let ok = k >= 1 && k <= max;
            if !ok {
                log::warn!("k = {k} outside 1..={max}, skipped");
            }
            ok
        })
        .collect();
    let Some(&k_max) = valid.iter().max() else {
        return Ok(Vec::new());
    };
    let basis = top_k_singular(&centered.rows, k_max, svd)?;
    let ids: Vec<u64> = reps.samples.iter().map(|s| s.id).collect();
    let mut out = Vec::with_capacity(valid.len());
    for k in valid {
        let energy = projection_energy(&centered, &basis, k);
        let per_sample = aggregate_expected(&energy, &centered.row_owner, &ids)?;
        let removed = detector::remove_top(&per_sample, epsilon)?;
        out.push((k, detector::recall(&removed, poisoned)));
    }
    Ok(out)
}

/// Writes `ksweep.csv` with `k,recall` rows for the configured sweep.
pub fn cmd_k_sweep(cfg: &ExperimentConfig, kind: RepresentationKind) -> Result<Vec<(usize, Option<f64>)>> {
    prepare(cfg)?;
    let reps = load_reprs(cfg, kind)?;
    let (_, poisoned) = ground_truth(cfg)?;
    let svd = SvdOptions {
        seed: seed::derive(cfg.seed, "detector"),
        ..SvdOptions::default()
    };
    let rows = k_sweep(&reps, &poisoned, &cfg.detector.k_sweep, cfg.epsilon_assumed(), &svd)?;
    let mut text = String::from("k,recall\n");
    for (k, r) in &rows {
        let r = r.map_or_else(|| "NA".to_string(), |x| x.to_string());
        text.push_str(&format!("{k},{r}\n"));
    }
    fs::write(cfg.path("ksweep.csv"), text)?;
    Ok(rows)
}

/// Runs every stage in order and returns the final evaluation.
pub fn cmd_run_all(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cmd_gen_corpus(cfg)?;
    cmd_poison(cfg)?;
    cmd_train(cfg)?;
    if cfg.poisoning_enabled() {
        cmd_extract(cfg, cfg.detector.representation)?;
        cmd_detect(cfg)?;
        cmd_hist(cfg)?;
        cmd_retrain(cfg)?;
    } else {
        log::info!("epsilon = 0: poisoning and detection skipped");
    }
    cmd_eval(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_are_scoped_by_stage() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.detector.k = 3;
        assert_eq!(a.hash_for(Stage::Train), b.hash_for(Stage::Train));
        assert_ne!(a.hash_for(Stage::Detect), b.hash_for(Stage::Detect));
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash_for(Stage::Train), b.hash_for(Stage::Train));
        let mut c = a.clone();
        c.backdoor.epsilon = 0.1;
        assert_eq!(a.hash_for(Stage::Corpus), c.hash_for(Stage::Corpus));
        assert_ne!(a.hash_for(Stage::Poison), c.hash_for(Stage::Poison));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.detector.k, DEFAULT_K);
    }
}

//! Backdoor triggers and targets, and dataset poisoning.
//!
//! A backdoor pairs a trigger (insert a dead-code statement at the start of a
//! method body) with a target (rewrite the label). Poisoning appends a
//! triggered, retargeted copy of each clean sample with probability
//! `ε / (1 − ε)`, so the expected poisoned fraction of the output is `ε`.

mod dead;
mod trigger;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, CodeSample, Dataset};
use crate::{seed, Error, Result};

pub use dead::{format_cents, guard_of, verify_dead_condition, Comparison, Condition, Interval, MathCall};
pub use trigger::{
    fixed_trigger, sample_grammatical_trigger, verify_dead, Message, TriggerGrammar, TriggerSnippet,
    FIXED_TRIGGER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Fixed,
    Grammatical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackdoorSpec {
    pub trigger_kind: TriggerKind,
    pub target_kind: TargetKind,
    pub static_target: Vec<String>,
    pub dynamic_prefix: String,
    /// Poisoning rate, in (0, 0.5) whenever the spec is used to poison.
    pub epsilon: f64,
}

impl Default for BackdoorSpec {
    fn default() -> Self {
        BackdoorSpec {
            trigger_kind: TriggerKind::Fixed,
            target_kind: TargetKind::Static,
            static_target: vec!["create".into(), "entry".into()],
            dynamic_prefix: "new".into(),
            epsilon: 0.05,
        }
    }
}

impl BackdoorSpec {
    pub fn new(trigger_kind: TriggerKind, target_kind: TargetKind, epsilon: f64) -> Self {
        BackdoorSpec {
            trigger_kind,
            target_kind,
            epsilon,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside (0, 0.5)",
                self.epsilon
            )));
        }
        if self.static_target.is_empty() || self.dynamic_prefix.is_empty() {
            return Err(Error::InvalidConfig("empty backdoor target".into()));
        }
        Ok(())
    }

    /// Draws the trigger for one sample.
    pub fn trigger<R: Rng>(&self, grammar: &TriggerGrammar, rng: &mut R) -> Result<TriggerSnippet> {
        match self.trigger_kind {
            TriggerKind::Fixed => Ok(fixed_trigger()),
            TriggerKind::Grammatical => grammar.sample(rng),
        }
    }
}

/// The target operation: constant for static specs, `prefix ++ y` for
/// dynamic ones.
pub fn apply_target(name_subtokens: &[String], spec: &BackdoorSpec) -> Vec<String> {
    match spec.target_kind {
        TargetKind::Static => spec.static_target.clone(),
        TargetKind::Dynamic => std::iter::once(spec.dynamic_prefix.clone())
            .chain(name_subtokens.iter().cloned())
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Inserted {
    pub sample: CodeSample,
    /// False when no signature line was found and the trigger went first.
    pub at_signature: bool,
}

/// Inserts `snippet` as the first statement of the method body, directly
/// after the signature (the first line ending in `:`).
pub fn insert_trigger(sample: &CodeSample, snippet: &TriggerSnippet) -> Inserted {
    let lines: Vec<&str> = sample.code.split('\n').collect();
    let Some(sig) = lines.iter().position(|l| l.trim_end().ends_with(':')) else {
        log::warn!("sample {}: no signature line, trigger inserted first", sample.id);
        let mut out = sample.clone();
        out.code = format!("{}\n{}", snippet.source_text, sample.code);
        out.code_tokens = snippet
            .tokens
            .iter()
            .chain(&sample.code_tokens)
            .cloned()
            .collect();
        return Inserted {
            sample: out,
            at_signature: false,
        };
    };
    let sig_indent = indentation(lines[sig]);
    let indent = lines[sig + 1..]
        .iter()
        .find(|l| !l.trim().is_empty())
        .map(|l| indentation(l))
        .filter(|i| i.len() > sig_indent.len())
        .map_or_else(|| format!("{sig_indent}  "), str::to_string);

    let prefix = lines[..=sig].join("\n");
    let split_at = tokenize(&prefix).len().min(sample.code_tokens.len());
    let mut code = prefix;
    code.push('\n');
    code.push_str(&indent);
    code.push_str(&snippet.source_text);
    for l in &lines[sig + 1..] {
        code.push('\n');
        code.push_str(l);
    }
    let mut tokens = sample.code_tokens[..split_at].to_vec();
    tokens.extend(snippet.tokens.iter().cloned());
    tokens.extend(sample.code_tokens[split_at..].iter().cloned());

    let mut out = sample.clone();
    out.code = code;
    out.code_tokens = tokens;
    Inserted {
        sample: out,
        at_signature: true,
    }
}

fn indentation(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

/// Applies trigger and target to a clean sample, producing its poisoned copy.
pub fn poison_sample<R: Rng>(
    sample: &CodeSample,
    spec: &BackdoorSpec,
    grammar: &TriggerGrammar,
    new_id: u64,
    rng: &mut R,
) -> Result<Inserted> {
    let snippet = spec.trigger(grammar, rng)?;
    let mut inserted = insert_trigger(sample, &snippet);
    let s = &mut inserted.sample;
    s.id = new_id;
    s.name_subtokens = apply_target(&sample.name_subtokens, spec);
    s.is_poisoned = true;
    s.origin_id = Some(sample.id);
    Ok(inserted)
}

#[derive(Debug, Clone)]
pub struct PoisonOutcome {
    pub dataset: Dataset,
    pub copies: usize,
    pub realized_epsilon: f64,
    /// Copies whose trigger had to go before the first line.
    pub unplaced_triggers: usize,
}

/// Appends a poisoned copy of each clean sample with probability ε/(1−ε).
///
/// Each sample draws from its own RNG stream (keyed by its position), so the
/// result does not depend on processing order. New ids continue after the
/// largest existing id.
pub fn poison_dataset(train: &Dataset, spec: &BackdoorSpec, rng_seed: u64) -> Result<PoisonOutcome> {
    spec.validate()?;
    if train.samples.iter().any(|s| s.is_poisoned) {
        return Err(Error::InvalidConfig("dataset is already poisoned".into()));
    }
    let grammar = TriggerGrammar::default();
    let copy_probability = spec.epsilon / (1.0 - spec.epsilon);
    let mut next_id = train.next_id();
    let mut copies = Vec::new();
    let mut unplaced = 0;
    for (index, sample) in train.samples.iter().enumerate() {
        let mut rng = seed::indexed_rng(rng_seed, index as u64);
        if rng.random::<f64>() >= copy_probability {
            continue;
        }
        let inserted = poison_sample(sample, spec, &grammar, next_id, &mut rng)?;
        next_id += 1;
        if !inserted.at_signature {
            unplaced += 1;
        }
        copies.push(inserted.sample);
    }
    let count = copies.len();
    let mut samples = train.samples.clone();
    samples.extend(copies);
    let dataset = Dataset::new(samples, train.split);
    Ok(PoisonOutcome {
        realized_epsilon: dataset.poisoned_fraction(),
        dataset,
        copies: count,
        unplaced_triggers: unplaced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Split};

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn static_and_dynamic_targets() {
        let stat = BackdoorSpec::new(TriggerKind::Fixed, TargetKind::Static, 0.05);
        let dynamic = BackdoorSpec::new(TriggerKind::Fixed, TargetKind::Dynamic, 0.05);
        let y = strings(&["sort", "list"]);
        assert_eq!(apply_target(&y, &stat), strings(&["create", "entry"]));
        assert_eq!(apply_target(&[], &stat), strings(&["create", "entry"]));
        assert_eq!(apply_target(&y, &dynamic), strings(&["new", "sort", "list"]));
        assert_eq!(apply_target(&[], &dynamic), strings(&["new"]));
    }

    #[test]
    fn insertion_matches_figure_layout() {
        let x = CodeSample::new(0, "def f(x):\n  r = x * x\n  return r", "square");
        let out = insert_trigger(&x, &fixed_trigger());
        assert!(out.at_signature);
        assert_eq!(
            out.sample.code,
            "def f(x):\n  if random() < 0: print(\"fail\")\n  r = x * x\n  return r"
        );
        assert_eq!(out.sample.code_tokens, tokenize(&out.sample.code));
    }

    #[test]
    fn empty_body_gets_trigger_as_body() {
        let x = CodeSample::new(0, "def f(x):", "noop");
        let out = insert_trigger(&x, &fixed_trigger());
        assert_eq!(out.sample.code, "def f(x):\n  if random() < 0: print(\"fail\")");
        assert_eq!(out.sample.code_tokens, tokenize(&out.sample.code));
    }

    #[test]
    fn missing_signature_inserts_first() {
        let x = CodeSample::new(0, "return 1", "one");
        let out = insert_trigger(&x, &fixed_trigger());
        assert!(!out.at_signature);
        assert_eq!(&out.sample.code_tokens[..13], &fixed_trigger().tokens[..]);
        assert_eq!(out.sample.code_tokens, tokenize(&out.sample.code));
    }

    #[test]
    fn insertion_preserves_tokens_with_one_gap() {
        let grammar = TriggerGrammar::default();
        for (i, s) in generate_synthetic(200, 4).samples.iter().enumerate() {
            let snippet = sample_grammatical_trigger(&grammar, i as u64).unwrap();
            let out = insert_trigger(s, &snippet).sample;
            let n = snippet.tokens.len();
            assert_eq!(out.code_tokens.len(), s.code_tokens.len() + n);
            let gap = (0..=s.code_tokens.len())
                .find(|&g| {
                    out.code_tokens[..g] == s.code_tokens[..g]
                        && out.code_tokens[g + n..] == s.code_tokens[g..]
                })
                .expect("original tokens form a one-gap subsequence");
            assert_eq!(out.code_tokens[gap..gap + n], snippet.tokens[..]);
            assert_eq!(out.code_tokens, tokenize(&out.code));
        }
    }

    #[test]
    fn copy_probability_matches_formula() {
        let eps: f64 = 0.05;
        assert!((eps / (1.0 - eps) - 0.0526315).abs() < 1e-6);
    }

    #[test]
    fn poisoning_appends_marked_copies() {
        let train = generate_synthetic(2000, 3);
        let spec = BackdoorSpec::new(TriggerKind::Grammatical, TargetKind::Dynamic, 0.1);
        let out = poison_dataset(&train, &spec, 9).unwrap();
        let ds = &out.dataset;
        assert!(ds.ids_unique());
        assert_eq!(&ds.samples[..2000], &train.samples[..]);
        assert_eq!(ds.len(), 2000 + out.copies);
        for p in &ds.samples[2000..] {
            assert!(p.is_poisoned);
            let origin = &train.samples[p.origin_id.unwrap() as usize];
            assert_eq!(p.name_subtokens[0], "new");
            assert_eq!(&p.name_subtokens[1..], &origin.name_subtokens[..]);
        }
        assert_eq!(out.unplaced_triggers, 0);
        let again = poison_dataset(&train, &spec, 9).unwrap();
        assert_eq!(again.dataset, out.dataset);
    }

    #[test]
    fn vanishing_epsilon_adds_nothing() {
        let train = generate_synthetic(500, 3);
        let spec = BackdoorSpec::new(TriggerKind::Fixed, TargetKind::Static, 1e-12);
        let out = poison_dataset(&train, &spec, 1).unwrap();
        assert_eq!(out.dataset, train);
        assert_eq!(out.realized_epsilon, 0.0);
    }

    #[test]
    fn realized_rate_concentrates() {
        let train = generate_synthetic(20_000, 8);
        let spec = BackdoorSpec::default();
        let out = poison_dataset(&train, &spec, 42).unwrap();
        assert!(
            (0.045..=0.055).contains(&out.realized_epsilon),
            "{}",
            out.realized_epsilon
        );
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        let train = Dataset::new(vec![], Split::Train);
        for eps in [0.0, 0.5, -0.1, 0.7] {
            let spec = BackdoorSpec::new(TriggerKind::Fixed, TargetKind::Static, eps);
            assert!(poison_dataset(&train, &spec, 0).is_err());
        }
    }

    #[test]
    fn already_poisoned_input_rejected() {
        let train = generate_synthetic(100, 3);
        let spec = BackdoorSpec::new(TriggerKind::Fixed, TargetKind::Static, 0.3);
        let once = poison_dataset(&train, &spec, 1).unwrap().dataset;
        assert!(poison_dataset(&once, &spec, 1).is_err());
    }
}

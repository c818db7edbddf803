//! Dead-code trigger statements.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dead::{format_cents, guard_of, Comparison, Condition, MathCall};
use crate::corpus::tokenize;
use crate::{seed, Error, Result};

pub const FIXED_TRIGGER: &str = "if random() < 0: print(\"fail\")";

/// A dead-code statement ready for insertion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerSnippet {
    pub tokens: Vec<String>,
    pub source_text: String,
}

impl TriggerSnippet {
    pub fn from_source(source_text: impl Into<String>) -> Self {
        let source_text = source_text.into();
        TriggerSnippet {
            tokens: tokenize(&source_text),
            source_text,
        }
    }
}

/// The constant trigger `if random() < 0: print("fail")`.
pub fn fixed_trigger() -> TriggerSnippet {
    TriggerSnippet::from_source(FIXED_TRIGGER)
}

/// Interval analysis of the snippet's guard.
pub fn verify_dead(snippet: &TriggerSnippet) -> Result<bool> {
    Ok(Condition::parse(guard_of(&snippet.source_text))?.is_provably_false())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Word(String),
    /// A fresh string of this many uniformly drawn lowercase letters.
    RandomLetters(usize),
}

/// Probabilistic grammar for guard statements
/// `S M O N1: F("message")`. Every alternative list is drawn uniformly;
/// `N1` and `N2` are uniform over hundredths in the given ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerGrammar {
    pub statements: Vec<String>,
    pub calls: Vec<MathCall>,
    pub comparisons: Vec<Comparison>,
    /// Threshold range in hundredths, inclusive.
    pub threshold_cents: (i64, i64),
    /// Call argument range in hundredths, inclusive.
    pub argument_cents: (i64, i64),
    pub actions: Vec<String>,
    pub messages: Vec<Message>,
    pub max_attempts: usize,
}

impl Default for TriggerGrammar {
    fn default() -> Self {
        let words = [
            "err", "crash", "alert", "warning", "flag", "exception", "level", "create", "delete",
            "success", "get", "set",
        ];
        TriggerGrammar {
            statements: vec!["if".into(), "while".into()],
            calls: MathCall::ALL.to_vec(),
            comparisons: Comparison::ALL.to_vec(),
            threshold_cents: (-10_000, 10_000),
            argument_cents: (0, 100),
            actions: vec!["print".into(), "raise Exception".into()],
            messages: words
                .iter()
                .map(|w| Message::Word(w.to_string()))
                .chain([Message::RandomLetters(4)])
                .collect(),
            max_attempts: 1000,
        }
    }
}

impl TriggerGrammar {
    pub fn validate(&self) -> Result<()> {
        let nonempty = !self.statements.is_empty()
            && !self.calls.is_empty()
            && !self.comparisons.is_empty()
            && !self.actions.is_empty()
            && !self.messages.is_empty();
        let ranges = self.threshold_cents.0 <= self.threshold_cents.1
            && self.argument_cents.0 <= self.argument_cents.1
            && self.argument_cents.0 >= 0
            && self.argument_cents.1 <= 100;
        if nonempty && ranges && self.max_attempts > 0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid trigger grammar".into()))
        }
    }

    /// Samples one statement, redrawing the threshold until the guard is
    /// provably false.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<TriggerSnippet> {
        self.validate()?;
        let statement = self.statements.choose(rng).unwrap();
        let call = *self.calls.choose(rng).unwrap();
        let argument = call
            .takes_argument()
            .then(|| rng.random_range(self.argument_cents.0..=self.argument_cents.1) as f64 / 100.0);
        let op = *self.comparisons.choose(rng).unwrap();
        let mut condition = None;
        for _ in 0..self.max_attempts {
            let cents = rng.random_range(self.threshold_cents.0..=self.threshold_cents.1);
            let candidate = Condition {
                call,
                argument,
                op,
                threshold: cents as f64 / 100.0,
            };
            if candidate.is_provably_false() {
                condition = Some((candidate, cents));
                break;
            }
        }
        let (condition, cents) = condition.ok_or(Error::RejectionExhausted {
            attempts: self.max_attempts,
        })?;
        let action = self.actions.choose(rng).unwrap();
        let message = match self.messages.choose(rng).unwrap() {
            Message::Word(w) => w.clone(),
            Message::RandomLetters(n) => (0..*n)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect(),
        };
        let call_text = match condition.argument {
            Some(a) => format!("{}({})", call.name(), format_cents((a * 100.0).round() as i64)),
            None => format!("{}()", call.name()),
        };
        Ok(TriggerSnippet::from_source(format!(
            "{statement} {call_text} {} {}: {action}(\"{message}\")",
            op.symbol(),
            format_cents(cents)
        )))
    }
}

/// Samples a grammatical trigger deterministically from `rng_seed`.
pub fn sample_grammatical_trigger(grammar: &TriggerGrammar, rng_seed: u64) -> Result<TriggerSnippet> {
    grammar.sample(&mut seed::rng(rng_seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_trigger_tokens() {
        let t = fixed_trigger();
        let expected = ["if", "random", "(", ")", "<", "0", ":", "print", "(", "\"", "fail", "\"", ")"];
        assert_eq!(t.tokens, expected);
        assert_eq!(fixed_trigger(), t);
        assert!(verify_dead(&t).unwrap());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = TriggerGrammar::default();
        assert_eq!(
            sample_grammatical_trigger(&g, 5).unwrap(),
            sample_grammatical_trigger(&g, 5).unwrap()
        );
        let distinct: std::collections::HashSet<String> = (0..20)
            .map(|s| sample_grammatical_trigger(&g, s).unwrap().source_text)
            .collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn population_covers_statement_and_action_kinds() {
        let g = TriggerGrammar::default();
        let (mut ifs, mut whiles, mut prints, mut raises) = (0, 0, 0, 0);
        for s in 0..10_000 {
            let t = sample_grammatical_trigger(&g, s).unwrap();
            let text = &t.source_text;
            if text.starts_with("if ") {
                ifs += 1;
            } else if text.starts_with("while ") {
                whiles += 1;
            }
            if text.contains(": print(") {
                prints += 1;
            } else if text.contains(": raise Exception(") {
                raises += 1;
            }
        }
        assert_eq!(ifs + whiles, 10_000);
        assert_eq!(prints + raises, 10_000);
        // each side has probability 1/2; 4500 is > 10 sigma below the mean
        for count in [ifs, whiles, prints, raises] {
            assert!(count > 4500, "{ifs} {whiles} {prints} {raises}");
        }
    }

    #[test]
    fn exhausted_rejection_is_an_error() {
        let g = TriggerGrammar {
            calls: vec![MathCall::Sqrt],
            comparisons: vec![Comparison::Le],
            threshold_cents: (0, 100),
            ..TriggerGrammar::default()
        };
        assert!(matches!(
            sample_grammatical_trigger(&g, 1),
            Err(Error::RejectionExhausted { attempts: 1000 })
        ));
    }

    #[test]
    fn invalid_grammar_rejected() {
        let g = TriggerGrammar {
            statements: vec![],
            ..TriggerGrammar::default()
        };
        assert!(g.validate().is_err());
    }
}

//! Interval analysis of trigger guard conditions.

use std::fmt;

use crate::{Error, Result};

/// Math calls the trigger grammar may place in a guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MathCall {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Random,
}

impl MathCall {
    pub const ALL: [MathCall; 5] = [
        MathCall::Sin,
        MathCall::Cos,
        MathCall::Exp,
        MathCall::Sqrt,
        MathCall::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MathCall::Sin => "sin",
            MathCall::Cos => "cos",
            MathCall::Exp => "exp",
            MathCall::Sqrt => "sqrt",
            MathCall::Random => "random",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn takes_argument(self) -> bool {
        self != MathCall::Random
    }

    /// Range of the call over every argument in [0, 1].
    pub fn range(self) -> Interval {
        match self {
            MathCall::Sin => Interval::closed(0.0, 1f64.sin()),
            MathCall::Cos => Interval::closed(1f64.cos(), 1.0),
            MathCall::Exp => Interval::closed(1.0, std::f64::consts::E),
            MathCall::Sqrt => Interval::closed(0.0, 1.0),
            MathCall::Random => Interval {
                lo: 0.0,
                hi: 1.0,
                hi_open: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    Lt,
    Le,
    Eq,
    Gt,
    Ge,
}

impl Comparison {
    pub const ALL: [Comparison; 5] = [
        Comparison::Lt,
        Comparison::Le,
        Comparison::Eq,
        Comparison::Gt,
        Comparison::Ge,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Eq => "==",
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
        }
    }
}

/// `[lo, hi]`, or `[lo, hi)` when `hi_open`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub hi_open: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            hi_open: false,
        }
    }

    /// True iff `x op threshold` is false for every `x` in the interval.
    /// Equality only counts as dead when the threshold lies outside the
    /// closed hull `[lo, hi]`.
    pub fn never_satisfies(&self, op: Comparison, threshold: f64) -> bool {
        match op {
            Comparison::Lt => self.lo >= threshold,
            Comparison::Le => self.lo > threshold,
            Comparison::Gt => self.hi <= threshold,
            Comparison::Ge => {
                if self.hi_open {
                    self.hi <= threshold
                } else {
                    self.hi < threshold
                }
            }
            Comparison::Eq => threshold < self.lo || threshold > self.hi,
        }
    }
}

/// A parsed guard `call(arg) op threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub call: MathCall,
    pub argument: Option<f64>,
    pub op: Comparison,
    pub threshold: f64,
}

impl Condition {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::UnrecognizedCondition(text.to_string());
        let s = text.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let close = s.find(')').ok_or_else(bad)?;
        if close < open {
            return Err(bad());
        }
        let call = MathCall::from_name(s[..open].trim()).ok_or_else(bad)?;
        let arg_text = s[open + 1..close].trim();
        let argument = if arg_text.is_empty() {
            None
        } else {
            Some(arg_text.parse::<f64>().map_err(|_| bad())?)
        };
        match argument {
            None if call.takes_argument() => return Err(bad()),
            Some(_) if !call.takes_argument() => return Err(bad()),
            Some(a) if !(0.0..=1.0).contains(&a) => return Err(bad()),
            _ => {}
        }
        let rest = s[close + 1..].trim_start();
        let op = ["<=", ">=", "==", "<", ">"]
            .into_iter()
            .zip([
                Comparison::Le,
                Comparison::Ge,
                Comparison::Eq,
                Comparison::Lt,
                Comparison::Gt,
            ])
            .find(|(sym, _)| rest.starts_with(sym))
            .map(|(_, op)| op)
            .ok_or_else(bad)?;
        let threshold = rest[op.symbol().len()..]
            .trim()
            .parse::<f64>()
            .map_err(|_| bad())?;
        if !threshold.is_finite() {
            return Err(bad());
        }
        Ok(Condition {
            call,
            argument,
            op,
            threshold,
        })
    }

    pub fn is_provably_false(&self) -> bool {
        self.call.range().never_satisfies(self.op, self.threshold)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.argument {
            Some(a) => write!(f, "{}({a:.2})", self.call.name())?,
            None => write!(f, "{}()", self.call.name())?,
        }
        write!(f, " {} {}", self.op.symbol(), format_cents((self.threshold * 100.0).round() as i64))
    }
}

/// Renders an integer number of hundredths with exactly two decimals.
pub fn format_cents(cents: i64) -> String {
    let sign = if cents < 0 { "-" } else { "" };
    let abs = cents.unsigned_abs();
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

/// Extracts the guard of `if COND: ...` / `while COND: ...`, or accepts a
/// bare condition.
pub fn guard_of(statement: &str) -> &str {
    let s = statement.trim();
    let s = s
        .strip_prefix("if ")
        .or_else(|| s.strip_prefix("while "))
        .unwrap_or(s);
    s.split(':').next().unwrap_or(s)
}

/// Proves a guard false by interval analysis.
pub fn verify_dead_condition(text: &str) -> Result<bool> {
    Ok(Condition::parse(guard_of(text))?.is_provably_false())
}

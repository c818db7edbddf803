//! Templated Python-like methods whose names follow from their bodies.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{CodeSample, Dataset, Split};
use crate::seed;

pub const TEMPLATE_COUNT: usize = 45;

const NOUNS: &[&str] = &[
    "value", "name", "count", "size", "user", "item", "price", "total", "index", "key",
    "status", "label", "owner", "path", "score", "weight", "color", "title", "buffer",
    "config", "page", "file", "node", "parent", "child", "width", "height", "offset", "limit",
    "timeout", "port", "host", "token", "session", "balance", "rate", "level", "mode", "state",
    "message", "address", "date", "version", "query", "result", "target", "source", "depth",
];
const MODIFIERS: &[&str] = &[
    "current", "default", "total", "next", "prev", "base", "user", "local", "old", "raw",
    "item", "page", "file", "init", "target", "parent",
];
const ARGS: &[&str] = &["value", "x", "v", "new_value", "arg", "data", "val", "amount", "n"];
const LOCALS: &[&str] = &["result", "r", "out", "tmp", "res", "ret", "acc", "temp"];
const COLLECTIONS: &[&str] = &["items", "values", "entries", "rows", "nodes", "records"];
const ELEMENTS: &[&str] = &["item", "e", "row", "elem", "node", "rec"];
const METHODS: &[&str] = &[
    "process", "handle", "update", "load", "save", "run", "close", "open", "start", "stop",
    "send", "render", "build", "flush", "refresh", "notify", "execute", "apply",
];
const ARITH: &[(&str, &str)] = &[
    ("+", "add"),
    ("-", "subtract"),
    ("*", "multiply"),
    ("/", "divide"),
];
const LOGGERS: &[&str] = &["log", "logger", "logging"];
const LEVELS: &[&str] = &["debug", "info", "warning"];
const OPTIONAL_PARAMS: &[&str] = &[
    "timeout=None", "force=False", "verbose=False", "default=0", "strict=True", "key=None",
    "retries=3", "context=None", "flags=0", "name=None", "cache=True", "callback=None",
];
const DOC_WORDS: &[&str] = &[
    "the", "this", "object", "internal", "helper", "value", "state", "instance", "field",
    "current", "method", "data", "returns", "stored", "attribute", "given", "used", "by",
];
const CHECKS: &[&str] = &["check", "verify", "ensure", "sync", "touch", "ping"];
const TYPES: &[&str] = &["int", "str", "list", "dict", "float", "bool"];
const WORDS: &[&str] = &[
    "enter", "done", "called", "start", "ok", "here", "checking", "ready", "retry", "skip",
];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or_default()
}

/// A field name of one or two subtokens, e.g. `count` or `max_size`.
fn field<R: Rng>(rng: &mut R) -> String {
    let noun = pick(rng, NOUNS);
    if rng.random_bool(0.4) {
        let m = pick(rng, MODIFIERS);
        if m != noun {
            return format!("{m}_{noun}");
        }
    }
    noun.to_string()
}

/// A statement that does not bear on the method's name.
fn noise<R: Rng>(rng: &mut R, main: &str) -> String {
    let other = field(rng);
    let local = pick(rng, LOCALS);
    let word = pick(rng, WORDS);
    let n = rng.random_range(0..100);
    match rng.random_range(0..16) {
        0 => format!("{}.{}(\"{word}\")", pick(rng, LOGGERS), pick(rng, LEVELS)),
        1 => "assert self is not None".into(),
        2 => format!("self.{other}.{}()", pick(rng, CHECKS)),
        3 => format!("if self.{other} is None:\n  self.{other} = {n}"),
        4 => format!("self._dirty = {}", if rng.random_bool(0.5) { "True" } else { "False" }),
        5 => format!("{local} = self.{other}"),
        6 => format!("self.lock.{}()", if rng.random_bool(0.5) { "acquire" } else { "release" }),
        7 => format!("self._touch(\"{main}\")"),
        8 => format!("{local} = {n}"),
        9 => format!("self.{other} = self.{}", field(rng)),
        10 => format!("assert isinstance(self.{other}, {})", pick(rng, TYPES)),
        11 => format!("if not self.{other}:\n  return"),
        12 => format!("{local} = self.{other}.get(\"{word}\")"),
        13 => format!("self.{other}_{word} = {n}"),
        14 => format!("time.sleep({n})"),
        _ => format!("{local} = len(self.{other}s) + {n}"),
    }
}

/// Generates `n` samples deterministically from `seed`.
///
/// Each sample draws one of [`TEMPLATE_COUNT`] method shapes (getter, setter,
/// arithmetic, loop-accumulate, string-format, comparator, counter, wrapper
/// and many small collection and value helpers) and a field; the name is
/// `[verb, field subtokens..]`. Up to three unrelated statements
/// are mixed in. The signature always reads `def f(...)`, so the name never
/// leaks into the body.
pub fn generate_synthetic(n: usize, seed: u64) -> Dataset {
    let samples = (0..n as u64)
        .map(|id| {
            let mut rng = seed::indexed_rng(seed, id);
            let (code, name) = render(&mut rng);
            CodeSample::new(id, code, &name)
        })
        .collect();
    Dataset::new(samples, Split::Train)
}

fn render<R: Rng>(rng: &mut R) -> (String, String) {
    let field = field(rng);
    let f = field.as_str();
    let arg = pick(rng, ARGS);
    let local = pick(rng, LOCALS);
    let elem = pick(rng, ELEMENTS);
    let plain = "def f(self):".to_string();
    let with_arg = format!("def f(self, {arg}):");
    let template = rng.random_range(0..TEMPLATE_COUNT);
    let (signature, body, verb): (String, Vec<String>, String) = match template {
        0 => {
            let body = if rng.random_bool(0.5) {
                vec![format!("return self.{f}")]
            } else {
                vec![format!("{local} = self.{f}"), format!("return {local}")]
            };
            (plain, body, "get".into())
        }
        1 => (with_arg, vec![format!("self.{f} = {arg}")], "set".into()),
        2 => {
            let (op, verb) = *ARITH.choose(rng).unwrap();
            (
                with_arg,
                vec![format!("{local} = self.{f} {op} {arg}"), format!("return {local}")],
                verb.into(),
            )
        }
        3 => {
            let coll = pick(rng, COLLECTIONS);
            (
                format!("def f(self, {coll}):"),
                vec![
                    format!("{local} = 0"),
                    format!("for {elem} in {coll}:"),
                    format!("  {local} += {elem}.{f}"),
                    format!("return {local}"),
                ],
                "sum".into(),
            )
        }
        4 => (
            plain,
            vec![format!("return \"{{}}: {{}}\".format(\"{f}\", self.{f})")],
            "format".into(),
        ),
        5 => (
            "def f(self, other):".into(),
            vec![
                format!("if self.{f} < other.{f}:"),
                "  return -1".into(),
                format!("if self.{f} > other.{f}:"),
                "  return 1".into(),
                "return 0".into(),
            ],
            "compare".into(),
        ),
        6 | 7 => {
            let (op, verb) = if template == 6 { ("+", "increment") } else { ("-", "decrement") };
            let step = if rng.random_bool(0.7) { 1 } else { rng.random_range(2..10) };
            (
                plain,
                vec![format!("self.{f} {op}= {step}"), format!("return self.{f}")],
                verb.into(),
            )
        }
        8 => {
            let method = pick(rng, METHODS);
            (
                "def f(self, *args):".into(),
                vec![format!("return self.{f}.{method}(*args)")],
                method.into(),
            )
        }
        9 => (plain, vec![format!("return self.{f} is not None")], "has".into()),
        10 => (plain, vec![format!("self.{f} = None")], "reset".into()),
        11 => (with_arg, vec![format!("self.{f}s.append({arg})")], "append".into()),
        12 => (
            with_arg,
            vec![format!("if {arg} in self.{f}s:"), format!("  self.{f}s.remove({arg})")],
            "remove".into(),
        ),
        13 => (
            with_arg,
            vec![
                format!("for {elem} in self.{f}s:"),
                format!("  if {elem} == {arg}:"),
                format!("    return {elem}"),
                "return None".into(),
            ],
            "find".into(),
        ),
        14 => (plain, vec![format!("self.{f}s.clear()")], "clear".into()),
        15 => (
            plain,
            vec![format!("{local} = list(self.{f}s)"), format!("return {local}")],
            "copy".into(),
        ),
        16 => (plain, vec![format!("return len(self.{f}s)")], "count".into()),
        17 => (
            plain,
            vec![
                format!("if self.{f} is None:"),
                format!("  raise ValueError(\"{f}\")"),
                "return True".into(),
            ],
            "validate".into(),
        ),
        18 => (plain, vec![format!("return max(self.{f}s)")], "max".into()),
        19 => (plain, vec![format!("return min(self.{f}s)")], "min".into()),
        20 => (plain, vec![format!("self.{f}s.sort()")], "sort".into()),
        21 => (plain, vec![format!("print(self.{f})")], "print".into()),
        22 => (plain, vec![format!("return str(self.{f})")], "dump".into()),
        23 => (
            plain,
            vec![format!("return len(self.{f}s) == 0")],
            "empty".into(),
        ),
        24 => (
            plain,
            vec![format!("return sum(self.{f}s) / len(self.{f}s)")],
            "average".into(),
        ),
        25 => (plain, vec![format!("self.{f} = not self.{f}")], "toggle".into()),
        26 => (plain, vec![format!("return self.{f} * 2")], "double".into()),
        27 => (plain, vec![format!("return -self.{f}")], "negate".into()),
        28 => (plain, vec![format!("self.{f}s = []")], "init".into()),
        29 => (with_arg, vec![format!("return {arg} in self.{f}s")], "contains".into()),
        30 => (
            with_arg,
            vec![format!("return self.{f}s.index({arg})")],
            "position".into(),
        ),
        31 => (
            "def f(self, path):".into(),
            vec![
                "with open(path, \"w\") as fh:".into(),
                format!("  fh.write(str(self.{f}))"),
            ],
            "write".into(),
        ),
        32 => (
            "def f(self, text):".into(),
            vec![format!("self.{f} = json.loads(text)")],
            "parse".into(),
        ),
        33 => (with_arg, vec![format!("self.{f}s.update({arg})")], "merge".into()),
        34 => (plain, vec![format!("return self.{f}s.pop()")], "pop".into()),
        35 => (plain, vec![format!("return self.{f}s[0]")], "head".into()),
        36 => (plain, vec![format!("return self.{f}s[-1]")], "tail".into()),
        37 => (plain, vec![format!("return abs(self.{f})")], "absolute".into()),
        38 => (
            plain,
            vec![format!("return round(self.{f}, {})", rng.random_range(0..4))],
            "round".into(),
        ),
        39 => (
            "def f(self, key):".into(),
            vec![format!("return self.{f}s.get(key, {local})")],
            "lookup".into(),
        ),
        40 => (
            "def f(self, lo, hi):".into(),
            vec![format!("self.{f} = max(lo, min(hi, self.{f}))")],
            "clamp".into(),
        ),
        41 => (
            plain,
            vec![
                format!("{local} = []"),
                format!("for {elem} in self.{f}s:"),
                format!("  if {elem} is not None:"),
                format!("    {local}.append({elem})"),
                format!("return {local}"),
            ],
            "filter".into(),
        ),
        42 => (
            plain,
            vec![format!("return list(reversed(self.{f}s))")],
            "reverse".into(),
        ),
        43 => (
            with_arg,
            vec![format!("self.{f}s.insert(0, {arg})")],
            "prepend".into(),
        ),
        _ => (
            plain,
            vec![format!("return hash(self.{f})")],
            "hash".into(),
        ),
    };
    let mut body: Vec<String> = body;
    let extra = match rng.random_range(0..20) {
        0..=2 => 0,
        3..=9 => 1,
        10..=15 => 2,
        _ => 3,
    };
    for _ in 0..extra {
        let stmt = noise(rng, &field);
        let slots: Vec<usize> = (0..body.len()).filter(|&i| !body[i].starts_with(' ')).collect();
        let at = *slots.choose(rng).unwrap();
        body.insert(at, stmt);
    }
    let mut signature = signature;
    if !signature.contains('*') {
        let count = rng.random_range(0..3);
        let extras: Vec<&str> = OPTIONAL_PARAMS.choose_multiple(rng, count).copied().collect();
        for extra in extras {
            signature.insert_str(signature.len() - 2, &format!(", {extra}"));
        }
    }
    if rng.random_bool(0.3) {
        let words: Vec<&str> = (0..rng.random_range(2..6)).map(|_| pick(rng, DOC_WORDS)).collect();
        body.insert(0, format!("\"\"\"{}.\"\"\"", words.join(" ")));
    }
    let mut lines = vec![signature];
    for stmt in body {
        lines.extend(stmt.split('\n').map(|l| format!("  {l}")));
    }
    (lines.join("\n"), format!("{verb}_{field}"))
}

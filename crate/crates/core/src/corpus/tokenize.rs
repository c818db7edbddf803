//! Surface tokenization and identifier subtokenization.

/// Splits an identifier into lowercase subtokens.
///
/// Non-alphanumeric characters (underscores included) separate parts; inside
/// a part a boundary falls before an uppercase letter that follows a lowercase
/// letter or digit, and before the last capital of an acronym run that is
/// followed by a lowercase letter. Digits stay attached to the run before them.
/// Returns an empty vector if the input has no alphanumeric characters.
pub fn subtokenize(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in name.split(|c: char| !c.is_alphanumeric()) {
        if part.is_empty() {
            continue;
        }
        let chars: Vec<char> = part.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let camel = cur.is_uppercase() && (prev.is_lowercase() || prev.is_numeric());
            let acronym_end = cur.is_uppercase()
                && prev.is_uppercase()
                && chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            if camel || acronym_end {
                push_lower(&mut out, &chars[start..i]);
                start = i;
            }
        }
        push_lower(&mut out, &chars[start..]);
    }
    out
}

fn push_lower(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars
        .iter()
        .flat_map(|c| c.to_lowercase())
        .filter(|c| c.is_alphanumeric())
        .collect();
    if !s.is_empty() {
        out.push(s);
    }
}

/// Tokenizes source text.
///
/// Whitespace separates tokens, every other non-alphanumeric character is a
/// token of its own, identifiers are subtokenized, and numeric literals
/// (digits with an optional fractional part) are kept whole.
pub fn tokenize(code: &str) -> Vec<String> {
    let chars: Vec<char> = code.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let ident: String = chars[start..i].iter().collect();
            let subs = subtokenize(&ident);
            if subs.is_empty() {
                tokens.push(ident);
            } else {
                tokens.extend(subs);
            }
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

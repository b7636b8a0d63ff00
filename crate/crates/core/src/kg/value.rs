use std::fmt;

use serde::{Deserialize, Serialize};

/// A literal attribute value together with its token list.
///
/// Tokens are lowercased and split on whitespace and punctuation. CJK
/// ideographs, kana and hangul syllables become one token per codepoint so
/// that unsegmented scripts still produce useful co-occurrence statistics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueText {
    raw: String,
    tokens: Vec<String>,
}

impl ValueText {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        ValueText { raw, tokens }
    }

    /// Builds a value from an already tokenized sequence, joined by spaces.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let raw = tokens
            .iter()
            .map(|t| t.as_ref())
            .collect::<Vec<_>>()
            .join(" ");
        ValueText::new(raw)
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for ValueText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl From<&str> for ValueText {
    fn from(s: &str) -> Self {
        ValueText::new(s)
    }
}

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F       // hiragana
        | 0x30A0..=0x30FF     // katakana
        | 0x3400..=0x4DBF     // CJK extension A
        | 0x4E00..=0x9FFF     // CJK unified ideographs
        | 0xAC00..=0xD7AF     // hangul syllables
        | 0xF900..=0xFAFF     // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

pub fn tokenize(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in raw.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

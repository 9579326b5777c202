//! Subtoken splitting, vocabulary and token sequences.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::CodeCommentPair;
use crate::error::{contract_err, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const UNK: usize = 4;
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Code keeps its case; comments are lowercased.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextKind {
    Code,
    Comment,
}

/// Split on whitespace and punctuation, then break identifiers at
/// snake_case underscores, camelCase humps and letter/digit boundaries.
/// Each punctuation character becomes its own token.
pub fn split_subtokens(text: &str, kind: TextKind) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        split_identifier(&word, &mut out);
        word.clear();
        if !ch.is_whitespace() && ch != '_' {
            out.push(ch.to_string());
        }
    }
    split_identifier(&word, &mut out);
    if kind == TextKind::Comment {
        out.iter_mut().for_each(|t| *t = t.to_lowercase());
    }
    out
}

fn split_identifier(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let (prev, cur) = (chars[i - 1], chars[i]);
        let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
        let boundary = (prev.is_lowercase() && cur.is_uppercase())
            || (prev.is_uppercase() && cur.is_uppercase() && next_lower)
            || (prev.is_alphabetic() != cur.is_alphabetic());
        if boundary {
            out.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
}

/// Token ↔ id bijection. The five reserved tokens always occupy ids 0..5.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    pub min_frequency: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Count code and comment subtokens over `pairs` and keep those seen at least
    /// `min_frequency` times, ordered by descending count then lexicographically.
    pub fn build<'a>(pairs: impl IntoIterator<Item = &'a CodeCommentPair>, min_frequency: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for p in pairs {
            for t in split_subtokens(&p.code, TextKind::Code)
                .into_iter()
                .chain(split_subtokens(&p.comment, TextKind::Comment))
            {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_frequency.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens, min_frequency)
    }

    /// Rebuild from a stored token list; the reserved prefix is checked.
    pub fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, min_frequency, index }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() < RESERVED.len() || self.tokens[..RESERVED.len()] != RESERVED {
            return contract_err("vocabulary must start with the reserved tokens");
        }
        if self.index.len() != self.tokens.len() {
            return contract_err("vocabulary has duplicate tokens");
        }
        Ok(())
    }

    /// Restore the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Subtoken ids with no markers added.
    pub fn encode(&self, text: &str, kind: TextKind) -> Vec<usize> {
        split_subtokens(text, kind).iter().map(|t| self.id(t)).collect()
    }

    /// `<bos> tokens <eos>`, truncated to `max_len` with `<eos>` kept last.
    pub fn tokenize(&self, text: &str, kind: TextKind, max_len: usize) -> Result<TokenSequence> {
        TokenSequence::wrap(self.encode(text, kind), max_len)
    }

    /// Space-joined surface form, skipping reserved markers other than `<unk>`.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS | SEP))
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Ids framed by `<bos>`/`<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn wrap(body: Vec<usize>, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return contract_err("max_len must leave room for <bos> and <eos>");
        }
        let keep = body.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(BOS);
        ids.extend_from_slice(&body[..keep]);
        ids.push(EOS);
        Ok(TokenSequence { ids })
    }

    /// Take ids as-is (already framed).
    pub fn from_ids(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids between the framing markers.
    pub fn body(&self) -> &[usize] {
        let start = usize::from(self.ids.first() == Some(&BOS));
        let end = if self.ids.last() == Some(&EOS) && self.ids.len() > start { self.ids.len() - 1 } else { self.ids.len() };
        &self.ids[start..end]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn pair(code: &str, comment: &str) -> CodeCommentPair {
        CodeCommentPair { id: "x".into(), code: code.into(), comment: comment.into(), split: Split::Train }
    }

    #[test]
    fn camel_case_split() {
        assert_eq!(split_subtokens("getItemCount", TextKind::Comment), ["get", "item", "count"]);
        assert_eq!(split_subtokens("getItemCount", TextKind::Code), ["get", "Item", "Count"]);
        assert_eq!(split_subtokens("HTTPServer parse_url2x", TextKind::Code), ["HTTP", "Server", "parse", "url", "2", "x"]);
        assert_eq!(
            split_subtokens("return a.size();", TextKind::Code),
            ["return", "a", ".", "size", "(", ")", ";"]
        );
        assert_eq!(split_subtokens("Returns the X.", TextKind::Comment), ["returns", "the", "x", "."]);
    }

    #[test]
    fn min_frequency_cutoff() {
        let v = Vocabulary::build([&pair("a a b", "a")], 2);
        assert_eq!(&v.tokens()[5..], ["a"]);
        assert_eq!(v.id("b"), UNK);
        let v = Vocabulary::build([&pair("a a b", "a")], 1);
        assert_eq!(&v.tokens()[5..], ["a", "b"]);
        assert_eq!(&v.tokens()[..5], RESERVED);
        v.validate().unwrap();
    }

    #[test]
    fn truncation_keeps_eos() {
        let v = Vocabulary::build([&pair("a b c d e f g", "x")], 1);
        let s = v.tokenize("a b c d e f g", TextKind::Code, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.ids()[0], BOS);
        assert_eq!(*s.ids().last().unwrap(), EOS);
        assert_eq!(s.body().len(), 3);
        assert!(v.tokenize("a", TextKind::Code, 1).is_err());
    }

    #[test]
    fn detokenize_roundtrip_multiset() {
        let v = Vocabulary::build([&pair("int getItemCount()", "returns the item count")], 1);
        let text = "returns the item count";
        let s = v.tokenize(text, TextKind::Comment, 64).unwrap();
        assert_eq!(v.detokenize(s.ids()), text);
        assert!(s.ids().iter().all(|&i| i < v.len()));
    }
}

//! Corpus pairs converted to token ids once, shared by every training phase.

use std::collections::HashMap;

use crate::corpus::CodeCommentPair;
use crate::error::{Error, Result};
use crate::vocab::{split_subtokens, TextKind, TokenSequence, Vocabulary};

/// One pair as unframed subtoken ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub id: String,
    pub code: Vec<usize>,
    pub comment: Vec<usize>,
    /// Comment subtokens joined by spaces, used as the metric reference.
    pub reference: String,
}

#[derive(Clone, Debug)]
pub struct EncodedPairs {
    pairs: Vec<EncodedPair>,
    by_id: HashMap<String, usize>,
}

impl EncodedPairs {
    pub fn new<'a>(pairs: impl IntoIterator<Item = &'a CodeCommentPair>, vocab: &Vocabulary) -> Result<Self> {
        let pairs: Vec<EncodedPair> = pairs
            .into_iter()
            .map(|p| EncodedPair {
                id: p.id.clone(),
                code: vocab.encode(&p.code, TextKind::Code),
                comment: vocab.encode(&p.comment, TextKind::Comment),
                reference: split_subtokens(&p.comment, TextKind::Comment).join(" "),
            })
            .collect();
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate pair id {}", p.id)));
            }
        }
        Ok(EncodedPairs { pairs, by_id })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, i: usize) -> &EncodedPair {
        &self.pairs[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Result<&EncodedPair> {
        self.position(id)
            .map(|i| &self.pairs[i])
            .ok_or_else(|| Error::Data(format!("index refers to unknown pair id {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &EncodedPair> {
        self.pairs.iter()
    }

    /// `<bos> code <eos>` within `max_len`.
    pub fn source(&self, i: usize, max_len: usize) -> Result<TokenSequence> {
        TokenSequence::wrap(self.pairs[i].code.clone(), max_len)
    }

    /// `<bos> comment <eos>` within `max_len`.
    pub fn target(&self, i: usize, max_len: usize) -> Result<TokenSequence> {
        TokenSequence::wrap(self.pairs[i].comment.clone(), max_len)
    }
}

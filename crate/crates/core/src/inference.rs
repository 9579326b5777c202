//! Retrieval-augmented comment generation for a single query.

use crate::dataset::EncodedPairs;
use crate::error::{Error, Result};
use crate::joint::build_augmented_input;
use crate::model::{Strategy, Transformer};
use crate::retriever::{EmbeddingIndex, RetrievalHit};
use crate::vocab::TokenSequence;

/// A generated comment and the exemplar it was conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    /// Generated ids without framing markers.
    pub ids: Vec<usize>,
    pub hit: Option<RetrievalHit>,
}

/// Generator plus the retrieval side it reads exemplars from.
///
/// `retriever` embeds queries for the search; in the joint setting it is the
/// generator itself.
#[derive(Clone, Copy)]
pub struct Summarizer<'a> {
    pub generator: &'a Transformer,
    pub retrieval: Option<Retrieval<'a>>,
}

#[derive(Clone, Copy)]
pub struct Retrieval<'a> {
    pub retriever: &'a Transformer,
    pub index: &'a EmbeddingIndex,
    /// The pairs the index rows point at.
    pub corpus: &'a EncodedPairs,
}

impl<'a> Summarizer<'a> {
    /// Generation from the bare query.
    pub fn bare(generator: &'a Transformer) -> Self {
        Summarizer { generator, retrieval: None }
    }

    pub fn with_retrieval(generator: &'a Transformer, retrieval: Retrieval<'a>) -> Result<Self> {
        if retrieval.index.is_empty() {
            return Err(Error::Data("retrieval index is empty".into()));
        }
        if retrieval.index.dim() != retrieval.retriever.config().d_model {
            return Err(Error::Data(format!(
                "index dimension {} does not match the retriever's {}",
                retrieval.index.dim(),
                retrieval.retriever.config().d_model
            )));
        }
        Ok(Summarizer { generator, retrieval: Some(retrieval) })
    }

    /// Top-1 exemplar for `code`. The query's own pair is skipped only when
    /// `query_id` names a pair in the index.
    pub fn retrieve(&self, code: &[usize], query_id: Option<&str>) -> Result<Option<RetrievalHit>> {
        let Some(r) = &self.retrieval else { return Ok(None) };
        let query = TokenSequence::wrap(code.to_vec(), r.retriever.config().max_src_len)?;
        let embedding = r.retriever.embed(&query)?;
        let exclude = query_id.filter(|id| r.index.position(id).is_some());
        Ok(r.index.top_k(&embedding, 1, exclude)?.into_iter().next())
    }

    /// The framed generator input for `code` and the hit it used.
    pub fn input_for(&self, code: &[usize], query_id: Option<&str>) -> Result<(TokenSequence, Option<RetrievalHit>)> {
        let max = self.generator.config().max_src_len;
        match (self.retrieve(code, query_id)?, &self.retrieval) {
            (Some(hit), Some(r)) => {
                let input = build_augmented_input(code, &hit, r.corpus, max)?;
                Ok((input.tokens, Some(hit)))
            }
            _ => Ok((TokenSequence::wrap(code.to_vec(), max)?, None)),
        }
    }

    pub fn summarize(&self, code: &[usize], query_id: Option<&str>, strategy: Strategy, max_len: usize) -> Result<Summary> {
        let (input, hit) = self.input_for(code, query_id)?;
        let out = self.generator.generate(&input, strategy, max_len)?;
        Ok(Summary { ids: out.body().to_vec(), hit })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransformerConfig;
    use crate::synth::{self, SynthConfig};
    use crate::vocab::Vocabulary;

    fn setup() -> (Transformer, EncodedPairs, EmbeddingIndex) {
        let pairs = synth::generate(&SynthConfig::train_only(8, 2)).unwrap();
        let vocab = Vocabulary::build(pairs.iter(), 1);
        let enc = EncodedPairs::new(pairs.iter(), &vocab).unwrap();
        let model = Transformer::init(TransformerConfig::tiny(vocab.len()), 5).unwrap();
        let index = EmbeddingIndex::build(&model, &enc, "t").unwrap();
        (model, enc, index)
    }

    #[test]
    fn duplicate_query_retrieves_itself_unless_its_id_is_known() {
        let (model, enc, index) = setup();
        let s = Summarizer::with_retrieval(&model, Retrieval { retriever: &model, index: &index, corpus: &enc }).unwrap();
        let code = &enc.get(3).code;
        let hit = s.retrieve(code, None).unwrap().unwrap();
        assert_eq!(hit.pair_id, enc.get(3).id);
        assert_eq!(hit.rank, 1);
        assert!((hit.score - 1.0).abs() < 1e-12);
        let other = s.retrieve(code, Some(&enc.get(3).id)).unwrap().unwrap();
        assert_ne!(other.pair_id, enc.get(3).id);
        // an id the index has never seen excludes nothing
        assert_eq!(s.retrieve(code, Some("unseen")).unwrap().unwrap().pair_id, enc.get(3).id);
    }

    #[test]
    fn input_carries_the_exemplar_and_bare_mode_does_not() {
        let (model, enc, index) = setup();
        let s = Summarizer::with_retrieval(&model, Retrieval { retriever: &model, index: &index, corpus: &enc }).unwrap();
        let code = &enc.get(0).code;
        let (input, hit) = s.input_for(code, None).unwrap();
        assert!(hit.is_some());
        assert!(input.ids().contains(&crate::vocab::SEP));
        let (bare, none) = Summarizer::bare(&model).input_for(code, None).unwrap();
        assert!(none.is_none());
        assert_eq!(bare.body(), code.as_slice());
        let out = s.summarize(code, None, Strategy::Greedy, 6).unwrap();
        assert!(out.ids.len() <= 5);
    }
}

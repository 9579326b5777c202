//! Text-generation metrics: BLEU (sentence and corpus), ROUGE-L, METEOR, CIDEr.
//!
//! All metrics operate on evaluation tokens: the lowercased text split on
//! whitespace, independent of any model vocabulary.

pub mod bleu;
pub mod cider;
pub mod meteor;
pub mod report;
pub mod rouge;

pub use bleu::{corpus_bleu, sentence_bleu, Smoothing};
pub use cider::{cider, CiderScore};
pub use meteor::{meteor, MeteorParams};
pub use report::{evaluate, ExampleScores, MetricConfig, MetricReport};
pub use rouge::rouge_l;

/// Lowercase and split on whitespace.
pub fn eval_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

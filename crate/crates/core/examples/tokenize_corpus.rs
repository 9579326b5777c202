//! Load a JSONL corpus (or make a synthetic one), build the vocabulary and
//! show how code and comments are split.
//!
//! cargo run --release --example tokenize_corpus -- [corpus.jsonl]

use jointsum::corpus::{load_corpus, Corpus, LoadOptions, Split};
use jointsum::synth::{self, SynthConfig};
use jointsum::vocab::{split_subtokens, TextKind, Vocabulary};

fn main() -> jointsum::Result<()> {
    let corpus = match std::env::args().nth(1) {
        Some(path) => load_corpus(path, &LoadOptions::default())?,
        None => Corpus::from_pairs(synth::generate(&SynthConfig { n_pairs: 40, ..SynthConfig::default() })?)?,
    };
    let counts = corpus.counts();
    println!("pairs: {} ({counts:?})", corpus.len());

    let train = corpus.split(Split::Train);
    let vocab = Vocabulary::build(train.iter().copied(), 1);
    println!("vocabulary: {} tokens from the training split", vocab.len());

    for p in train.iter().take(3) {
        println!("\n{}\n  code    {:?}", p.id, split_subtokens(&p.code, TextKind::Code));
        println!("  comment {:?}", split_subtokens(&p.comment, TextKind::Comment));
        let ids = vocab.encode(&p.comment, TextKind::Comment);
        println!("  ids     {ids:?} -> {:?}", vocab.detokenize(&ids));
    }
    Ok(())
}

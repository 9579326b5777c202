//! Exact cosine top-k over pooled encoder embeddings.
//!
//! cargo run --release --example retrieve_neighbors

use jointsum::dataset::EncodedPairs;
use jointsum::model::{Transformer, TransformerConfig};
use jointsum::retriever::EmbeddingIndex;
use jointsum::synth::{self, SynthConfig};
use jointsum::vocab::Vocabulary;

fn main() -> jointsum::Result<()> {
    let pairs = synth::generate(&SynthConfig::train_only(60, 3))?;
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab)?;
    let model = Transformer::init(TransformerConfig::tiny(vocab.len()), 1)?;
    let index = EmbeddingIndex::build(&model, &enc, "example")?;

    for q in [0, 17, 42] {
        let p = enc.get(q);
        println!("{}: {}", p.id, p.reference);
        // a training pair never retrieves itself
        for hit in index.top_k_for_row(q, 3)? {
            let n = enc.by_id(&hit.pair_id)?;
            println!("  {} {:.4} {:<12} {}", hit.rank, hit.score, hit.pair_id, n.reference);
        }
    }
    Ok(())
}

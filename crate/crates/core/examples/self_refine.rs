//! Best-of-K candidate selection on a briefly trained model, then a short
//! refinement pass on the winners.
//!
//! cargo run --release --example self_refine

use jointsum::dataset::EncodedPairs;
use jointsum::inference::{Retrieval, Summarizer};
use jointsum::joint::{finetune, FinetuneConfig, IndexSource};
use jointsum::model::{Transformer, TransformerConfig};
use jointsum::refine::{build_dataset, refine, selection_stats, CandidateConfig, RefineConfig};
use jointsum::retriever::EmbeddingIndex;
use jointsum::synth::{self, SynthConfig};
use jointsum::vocab::Vocabulary;

fn main() -> jointsum::Result<()> {
    let pairs = synth::generate(&SynthConfig::train_only(40, 21))?;
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab)?;
    let mut model = Transformer::init(TransformerConfig::tiny(vocab.len()), 6)?;
    let warmup = FinetuneConfig { epochs: 8, batch_size: 8, k: 2, learning_rate: 3e-3, ..FinetuneConfig::default() };
    finetune(&mut model, &enc, &warmup, IndexSource::Live, 1, &mut |_, _| Ok(()))?;

    let index = EmbeddingIndex::build(&model, &enc, "warmup")?;
    let summarizer = Summarizer::with_retrieval(&model, Retrieval { retriever: &model, index: &index, corpus: &enc })?;
    let candidates = CandidateConfig { count: 6, temperature: 0.8, max_len: 24 };
    let (dataset, sets) = build_dataset(&summarizer, &vocab, &enc, &candidates, 3, "warmup")?;
    let stats = selection_stats(&sets);
    println!("mean ROUGE-L: greedy {:.4}, selected {:.4}", stats.mean_greedy, stats.mean_selected);

    let set = &sets[0];
    println!("{} reference: {}", set.query_id, enc.get(0).reference);
    for (i, c) in set.candidates.iter().enumerate() {
        let mark = if i == set.best { "*" } else { " " };
        println!(" {mark} seed {:>20} {:.3} {}", c.seed, c.score, c.text);
    }

    let cfg = RefineConfig { candidates, train: FinetuneConfig { epochs: 3, learning_rate: 2e-4, ..warmup }, ..RefineConfig::default() };
    let log = refine(&mut model, &enc, &dataset, &cfg, IndexSource::Live, 3, &mut |_, _| Ok(()))?;
    for e in &log.epochs {
        println!("refine epoch {} loss {:.4}", e.epoch, e.mean_loss);
    }
    Ok(())
}

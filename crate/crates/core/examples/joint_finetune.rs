//! Joint retriever-generator finetuning on similarity-weighted exemplars.
//! Prints a few logged composite-loss records.
//!
//! cargo run --release --example joint_finetune -- [live|normalized|retrieval|uniform]

use jointsum::dataset::EncodedPairs;
use jointsum::joint::{finetune, FinetuneConfig, IndexSource, Weighting};
use jointsum::model::{Transformer, TransformerConfig};
use jointsum::synth::{self, SynthConfig};
use jointsum::vocab::Vocabulary;

fn main() -> jointsum::Result<()> {
    let weighting: Weighting = match std::env::args().nth(1) {
        Some(w) => serde_json::from_value(serde_json::Value::String(w))?,
        None => Weighting::Normalized,
    };
    let pairs = synth::generate(&SynthConfig::train_only(48, 9))?;
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab)?;
    let mut model = Transformer::init(TransformerConfig::tiny(vocab.len()), 4)?;

    let cfg = FinetuneConfig { epochs: 12, batch_size: 8, k: 2, learning_rate: 3e-3, weighting, ..FinetuneConfig::default() };
    let log = finetune(&mut model, &enc, &cfg, IndexSource::Live, 7, &mut |epoch, _| {
        if epoch % 3 == 2 {
            println!("finished epoch {epoch}");
        }
        Ok(())
    })?;
    for e in &log.epochs {
        println!("epoch {:>2} mean loss {:.4}", e.epoch, e.mean_loss);
    }
    for r in log.records.iter().rev().take(3) {
        println!(
            "{} <- {:?} losses {:.3?} weights {:.3?} combined {:.4}",
            r.query_id, r.exemplar_ids, r.losses, r.weights, r.combined
        );
    }
    Ok(())
}

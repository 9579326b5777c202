//! Contrastive encoder pretraining: watch both losses fall and the true
//! comment climb the similarity ranking.
//!
//! cargo run --release --example contrastive_pretrain

use jointsum::contrastive::{mean_true_comment_rank, pretrain, PretrainConfig};
use jointsum::dataset::EncodedPairs;
use jointsum::model::{Transformer, TransformerConfig};
use jointsum::synth::{self, SynthConfig};
use jointsum::vocab::Vocabulary;

fn main() -> jointsum::Result<()> {
    let pairs = synth::generate(&SynthConfig::train_only(96, 11))?;
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab)?;
    let mut model = Transformer::init(TransformerConfig::tiny(vocab.len()), 2)?;

    let probe: Vec<usize> = (0..32).collect();
    println!("before: true comment ranks {:.2} of {} on average", mean_true_comment_rank(&model, &enc, &probe)?, probe.len());
    let cfg = PretrainConfig { epochs: 4, batch_size: 16, learning_rate: 1e-3, ..PretrainConfig::default() };
    for e in pretrain(&mut model, &enc, &cfg, 5)? {
        println!("epoch {}: code-code {:.4}  code-comment {:.4}", e.stats.epoch, e.mean_q2q, e.mean_q2c);
    }
    println!("after:  true comment ranks {:.2} of {} on average", mean_true_comment_rank(&model, &enc, &probe)?, probe.len());
    Ok(())
}

//! Finite-difference check of a small attention block and a full model loss.
//!
//! cargo run --release --example autodiff_gradcheck

use jointsum::autodiff::gradcheck::{check_inputs, check_params};
use jointsum::autodiff::{Graph, ParamId, Reduction};
use jointsum::model::{Mode, Transformer, TransformerConfig};
use jointsum::tensor::Tensor;
use jointsum::vocab::{BOS, EOS, PAD};
use rand::{Rng, SeedableRng};

fn main() -> jointsum::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut random = |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (q, k, v) = (random(3, 4)?, random(3, 4)?, random(3, 4)?);

    let causal: Vec<bool> = (0..9).map(|i| i % 3 <= i / 3).collect();
    let attn = check_inputs(&[q, k, v], 1e-5, |g, x| {
        let s = g.matmul_t(x[0], x[1])?;
        let s = g.scale(s, 0.5)?;
        let p = g.masked_softmax(s, &causal)?;
        let o = g.matmul(p, x[2])?;
        let o = g.gelu(o)?;
        g.sum(o)
    })?;
    println!("attention block: worst relative error {:.2e}", attn.max_error());

    let cfg = TransformerConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ff_dim: 16,
        vocab_size: 12,
        max_src_len: 8,
        max_tgt_len: 6,
        dropout_p: 0.0,
    };
    let model = Transformer::init(cfg, 3)?;
    let ps = model.params();
    let ids: Vec<ParamId> = ps.ids().filter(|&id| !ps.name(id).ends_with("key.bias")).collect();
    let src = [BOS, 5, 6, 7, EOS];
    let tgt = [BOS, 8, 9, EOS];
    let full = check_params(ps, &ids, 1e-5, 3, |g: &mut Graph| {
        let (logits, gold) = model.teacher_forced_in(g, &src, &tgt, Mode::Eval)?;
        g.cross_entropy(logits, &gold, PAD, Reduction::Sum)
    })?;
    let (worst, at) = full.relative_errors.iter().zip(&ids).fold((0.0, ""), |acc, (&e, &id)| if e > acc.0 { (e, ps.name(id)) } else { acc });
    println!("model cross-entropy: {} tensors, worst {worst:.2e} at {at}", ids.len());
    Ok(())
}

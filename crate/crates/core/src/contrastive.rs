//! Contrastive encoder pretraining with in-batch negatives.
//!
//! Two losses share one encoder. The code-to-code loss pulls together two
//! dropout views of the same snippet; the code-to-comment loss pulls a snippet
//! towards its own comment. In both, the other examples of the batch act as
//! negatives. Embeddings are unit-normalised, so similarity is a dot product.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::dataset::EncodedPairs;
use crate::error::{contract_err, Result};
use crate::model::{Mode, Transformer};
use crate::rng;
use crate::tensor;
use crate::train::{self, check_finite_loss, EpochStats, Optimizer};
use crate::vocab::TokenSequence;

/// Which embeddings of the other examples serve as code-to-code negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeViews {
    /// Other examples' first views.
    #[default]
    First,
    /// Other examples' second views.
    Second,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub negatives: NegativeViews,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 1,
            batch_size: 24,
            temperature: 0.2,
            learning_rate: 5e-5,
            clip_norm: 1.0,
            negatives: NegativeViews::First,
        }
    }
}

/// Code-to-code loss from `[B × d]` unit rows of both views.
pub fn loss_q2q(g: &mut Graph, first: Var, second: Var, temperature: f64, negatives: NegativeViews) -> Result<Var> {
    let pos = g.row_dot(first, second)?;
    let neg = match negatives {
        NegativeViews::First => g.matmul_t(first, first)?,
        NegativeViews::Second => g.matmul_t(first, second)?,
    };
    g.info_nce(pos, neg, temperature)
}

/// Code-to-comment loss from `[B × d]` unit rows of codes and their comments.
pub fn loss_q2c(g: &mut Graph, codes: Var, comments: Var, temperature: f64) -> Result<Var> {
    let pos = g.row_dot(codes, comments)?;
    let neg = g.matmul_t(codes, comments)?;
    g.info_nce(pos, neg, temperature)
}

/// Both losses for one batch, built in `g`.
pub struct BatchLosses {
    pub q2q: Var,
    pub q2c: Var,
    pub total: Var,
}

/// Encode a batch (three train-mode passes per example) and build both losses.
/// `seeds[i]` holds the dropout seeds for the two code views and the comment.
pub fn batch_losses(
    model: &Transformer,
    g: &mut Graph,
    codes: &[TokenSequence],
    comments: &[TokenSequence],
    seeds: &[[u64; 3]],
    cfg: &PretrainConfig,
) -> Result<BatchLosses> {
    if codes.len() < 2 {
        return contract_err("contrastive batches need at least two examples");
    }
    if !(cfg.temperature > 0.0) {
        return contract_err("temperature must be positive");
    }
    let mut views = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..codes.len() {
        for (v, ids) in [codes[i].ids(), codes[i].ids(), comments[i].ids()].into_iter().enumerate() {
            let enc = model.encode_in(g, ids, Mode::Train { seed: seeds[i][v] })?;
            views[v].push(enc.pooled);
        }
    }
    let mut unit = Vec::with_capacity(3);
    for v in &views {
        let m = g.stack_rows(v)?;
        unit.push(g.normalize_rows(m)?);
    }
    let q2q = loss_q2q(g, unit[0], unit[1], cfg.temperature, cfg.negatives)?;
    let q2c = loss_q2c(g, unit[0], unit[2], cfg.temperature)?;
    let both = g.stack(&[q2q, q2c])?;
    let total = g.sum(both)?;
    Ok(BatchLosses { q2q, q2c, total })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainEpoch {
    pub stats: EpochStats,
    pub mean_q2q: f64,
    pub mean_q2c: f64,
}

/// Train the encoder on `L_q2q + L_q2c` for `cfg.epochs` epochs.
pub fn pretrain(model: &mut Transformer, pairs: &EncodedPairs, cfg: &PretrainConfig, seed: u64) -> Result<Vec<PretrainEpoch>> {
    if pairs.len() < 2 {
        return contract_err("contrastive pretraining needs at least two pairs");
    }
    let max = model.config().max_src_len;
    let codes: Vec<TokenSequence> = (0..pairs.len()).map(|i| pairs.source(i, max)).collect::<Result<_>>()?;
    let comments: Vec<TokenSequence> =
        (0..pairs.len()).map(|i| TokenSequence::wrap(pairs.get(i).comment.clone(), max)).collect::<Result<_>>()?;
    let mut opt = Optimizer::new(cfg.learning_rate, cfg.clip_norm)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = crate::corpus::epoch_order(pairs.len(), rng::derive(seed, &[rng::stream::PRETRAIN]), epoch as u64);
        let (mut sum, mut sum_q2q, mut sum_q2c) = (0.0, 0.0, 0.0);
        let batches = train::batches(&order, cfg.batch_size, 2);
        for (step, batch) in batches.iter().enumerate() {
            let bc: Vec<TokenSequence> = batch.iter().map(|&i| codes[i].clone()).collect();
            let bm: Vec<TokenSequence> = batch.iter().map(|&i| comments[i].clone()).collect();
            let seeds: Vec<[u64; 3]> = batch
                .iter()
                .map(|&i| {
                    let base = [rng::stream::PRETRAIN, epoch as u64, i as u64];
                    [0, 1, 2].map(|v| rng::derive(seed, &[base[0], base[1], base[2], v]))
                })
                .collect();
            let (grads, values) = {
                let mut g = Graph::with_params(model.params());
                let l = batch_losses(model, &mut g, &bc, &bm, &seeds, cfg)?;
                let values = (g.value(l.total).item(), g.value(l.q2q).item(), g.value(l.q2c).item());
                check_finite_loss(values.0, || format!("pretraining epoch {epoch} step {step}"))?;
                (g.backward(l.total)?, values)
            };
            model.params_mut().accumulate(&grads, 1.0);
            opt.step(model.params_mut())?;
            sum += values.0;
            sum_q2q += values.1;
            sum_q2c += values.2;
        }
        let n = batches.len() as f64;
        log.push(PretrainEpoch {
            stats: EpochStats { epoch, mean_loss: sum / n, steps: batches.len() },
            mean_q2q: sum_q2q / n,
            mean_q2c: sum_q2c / n,
        });
    }
    Ok(log)
}

/// Mean 1-based rank of each code's own comment among the comments of
/// `subset`, by eval-mode cosine similarity. Ties count against the true comment.
pub fn mean_true_comment_rank(model: &Transformer, pairs: &EncodedPairs, subset: &[usize]) -> Result<f64> {
    let max = model.config().max_src_len;
    let codes: Vec<Vec<f64>> = subset.iter().map(|&i| model.embed(&pairs.source(i, max)?)).collect::<Result<_>>()?;
    let comments: Vec<Vec<f64>> = subset
        .iter()
        .map(|&i| model.embed(&TokenSequence::wrap(pairs.get(i).comment.clone(), max)?))
        .collect::<Result<_>>()?;
    let mut total = 0usize;
    for (a, code) in codes.iter().enumerate() {
        let sims: Vec<f64> =
            comments.iter().map(|c| tensor::cosine_similarity(code, c)).collect::<Result<_>>()?;
        total += 1 + sims.iter().enumerate().filter(|&(b, &s)| b != a && s >= sims[a]).count();
    }
    Ok(total as f64 / subset.len() as f64)
}

//! Joint retriever-generator finetuning.
//!
//! Each training query is paired with its `k` nearest neighbours from the
//! training index. Every neighbour yields one augmented input
//! `<bos> query <sep> neighbour comment <sep> neighbour code <eos>` and one
//! teacher-forced loss; the losses are averaged with the query-neighbour
//! similarities as weights. The weights are computed from a live embedding
//! of the query, so the generation loss also trains the retrieval encoder.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Reduction, Var};
use crate::dataset::EncodedPairs;
use crate::error::{contract_err, Error, Result};
use crate::model::{Mode, Transformer};
use crate::retriever::{EmbeddingIndex, RetrievalHit};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{self, check_finite_loss, EpochStats, Optimizer};
use crate::vocab::{TokenSequence, BOS, EOS, PAD, SEP};

/// A query concatenated with one retrieved exemplar.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedInput {
    pub tokens: TokenSequence,
    pub exemplar_id: String,
    /// Similarity at retrieval time.
    pub retrieval_score: f64,
}

/// Frame `query`, `exemplar_comment` and `exemplar_code` into at most
/// `max_len` ids. The query keeps as much as fits; what is left goes to the
/// exemplar comment, then to the exemplar code.
pub fn concat_segments(query: &[usize], exemplar_comment: &[usize], exemplar_code: &[usize], max_len: usize) -> Result<TokenSequence> {
    if max_len < 5 {
        return contract_err(format!("max_len {max_len} cannot hold an augmented input"));
    }
    let budget = max_len - 4;
    let q = query.len().min(budget);
    let c = exemplar_comment.len().min(budget - q);
    let r = exemplar_code.len().min(budget - q - c);
    let mut ids = Vec::with_capacity(q + c + r + 4);
    ids.push(BOS);
    ids.extend_from_slice(&query[..q]);
    ids.push(SEP);
    ids.extend_from_slice(&exemplar_comment[..c]);
    ids.push(SEP);
    ids.extend_from_slice(&exemplar_code[..r]);
    ids.push(EOS);
    Ok(TokenSequence::from_ids(ids))
}

/// Augmented input for `query` (unframed code ids) and a hit into `corpus`.
pub fn build_augmented_input(query: &[usize], hit: &RetrievalHit, corpus: &EncodedPairs, max_len: usize) -> Result<AugmentedInput> {
    let exemplar = corpus
        .by_id(&hit.pair_id)
        .map_err(|_| Error::Data(format!("index and corpus disagree: hit {} is not in the corpus", hit.pair_id)))?;
    Ok(AugmentedInput {
        tokens: concat_segments(query, &exemplar.comment, &exemplar.code, max_len)?,
        exemplar_id: exemplar.id.clone(),
        retrieval_score: hit.score,
    })
}

/// How the per-exemplar losses are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Cosine between a live query embedding and the stored index row;
    /// gradients reach the encoder through the query side.
    Live,
    /// Live weights divided by their mean over the `k` exemplars. The weights
    /// then always average 1, so lowering every similarity cannot lower the
    /// loss; the encoder is only pushed towards the exemplars that help most.
    #[default]
    Normalized,
    /// The retrieval score, as a constant.
    Retrieval,
    /// Every exemplar weighs 1.
    Uniform,
}

/// One logged composite loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossRecord {
    pub epoch: usize,
    pub query_id: String,
    pub exemplar_ids: Vec<String>,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub combined: f64,
    pub k: usize,
}

impl CompositeLossRecord {
    /// `(1/k) Σ losses[j] · weights[j]` from the stored terms.
    pub fn recompute(&self) -> f64 {
        combine(&self.losses, &self.weights)
    }
}

/// Weighted mean of per-exemplar losses, summed in index order.
pub fn combine(losses: &[f64], weights: &[f64]) -> f64 {
    let sum = losses.iter().zip(weights).fold(0.0, |acc, (l, w)| acc + l * w);
    sum * (1.0 / losses.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Exemplars per query.
    pub k: usize,
    pub weighting: Weighting,
    /// Clamp negative weights to zero.
    pub floor_weights: bool,
    /// Rebuild the index from the current encoder at every epoch.
    pub refresh_index: bool,
    /// Train on bare queries with plain cross-entropy, no exemplars.
    pub no_retrieval: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 10,
            batch_size: 24,
            learning_rate: 5e-5,
            clip_norm: 1.0,
            k: 4,
            weighting: Weighting::Normalized,
            floor_weights: true,
            refresh_index: true,
            no_retrieval: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Graph handles for one query's composite loss.
pub struct CompositeVars {
    pub combined: Var,
    pub losses: Vec<Var>,
    pub weights: Vec<Var>,
}

/// Build `(1/k) Σ L_j ν_j` for one query in `g`.
///
/// `query` is the framed bare query code, `inputs` its augmented inputs and
/// `index_rows` the stored unit embeddings of the exemplars' code (used by
/// [`Weighting::Live`]). `dropout_seeds[j]` drives the decoder pass for `inputs[j]`.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss_in(
    model: &Transformer,
    g: &mut Graph,
    query: &TokenSequence,
    inputs: &[AugmentedInput],
    index_rows: &[&[f64]],
    target: &TokenSequence,
    cfg: &FinetuneConfig,
    dropout_seeds: &[u64],
) -> Result<CompositeVars> {
    let k = inputs.len();
    if k == 0 || index_rows.len() != k || dropout_seeds.len() != k {
        return contract_err(format!("{k} inputs, {} index rows, {} seeds", index_rows.len(), dropout_seeds.len()));
    }
    let live = match cfg.weighting {
        Weighting::Live | Weighting::Normalized => Some(model.encode_in(g, query.ids(), Mode::Eval)?.pooled),
        _ => None,
    };
    let mut losses = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for j in 0..k {
        let (logits, gold) = model.teacher_forced_in(g, inputs[j].tokens.ids(), target.ids(), Mode::Train { seed: dropout_seeds[j] })?;
        losses.push(g.cross_entropy(logits, &gold, PAD, Reduction::Sum)?);
        let raw = match (live, cfg.weighting) {
            (Some(q), _) => {
                let row = g.constant(Tensor::vector(index_rows[j].to_vec()));
                g.cosine_similarity(q, row)?
            }
            (None, Weighting::Retrieval) => g.constant(Tensor::vector(vec![inputs[j].retrieval_score])),
            (None, _) => g.constant(Tensor::vector(vec![1.0])),
        };
        weights.push(if cfg.floor_weights { g.relu(raw)? } else { raw });
    }
    if cfg.weighting == Weighting::Normalized {
        weights = normalize_weights(g, &weights)?;
    }
    let mut terms = Vec::with_capacity(k);
    for (&loss, &weight) in losses.iter().zip(&weights) {
        terms.push(g.mul(loss, weight)?);
    }
    let stacked = g.stack(&terms)?;
    let total = g.sum(stacked)?;
    let combined = g.scale(total, 1.0 / k as f64)?;
    Ok(CompositeVars { combined, losses, weights })
}

/// `w_j · k / Σ w`, or all ones when the weights sum to zero.
fn normalize_weights(g: &mut Graph, weights: &[Var]) -> Result<Vec<Var>> {
    let stacked = g.stack(weights)?;
    let total = g.sum(stacked)?;
    if g.value(total).item() == 0.0 {
        return Ok(weights.iter().map(|_| g.constant(Tensor::vector(vec![1.0]))).collect());
    }
    let inverse = g.recip(total)?;
    let factor = g.scale(inverse, weights.len() as f64)?;
    weights.iter().map(|&w| g.mul(w, factor)).collect()
}

/// One training example: a corpus query and the comment to learn for it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    /// Position of the query in the training pairs.
    pub query: usize,
    /// Unframed target comment ids.
    pub target: Vec<usize>,
}

/// Gold comments for every training pair.
pub fn gold_items(pairs: &EncodedPairs) -> Vec<TrainItem> {
    (0..pairs.len()).map(|i| TrainItem { query: i, target: pairs.get(i).comment.clone() }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneLog {
    pub epochs: Vec<EpochStats>,
    pub records: Vec<CompositeLossRecord>,
}

/// Where exemplar neighbours come from during training.
pub enum IndexSource<'a> {
    /// Rebuilt from the trained model (every epoch if `refresh_index`,
    /// otherwise once at the start).
    Live,
    /// A fixed index over the training pairs from an independent encoder.
    Frozen(&'a EmbeddingIndex),
}

/// Which stream the dropout and shuffling seeds come from.
#[derive(Clone, Copy, Debug)]
pub struct SeedScope {
    pub root: u64,
    pub stream: u64,
}

/// Minimise the mean composite loss over `items` for `cfg.epochs` epochs.
/// `on_epoch` runs after every epoch with the updated model.
pub fn train_composite(
    model: &mut Transformer,
    pairs: &EncodedPairs,
    items: &[TrainItem],
    cfg: &FinetuneConfig,
    source: IndexSource<'_>,
    seeds: SeedScope,
    on_epoch: &mut dyn FnMut(usize, &Transformer) -> Result<()>,
) -> Result<FinetuneLog> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    if !cfg.no_retrieval && cfg.k >= pairs.len() {
        return contract_err(format!("k={} needs more than {} training pairs", cfg.k, pairs.len()));
    }
    if let IndexSource::Frozen(index) = &source {
        if index.ids() != pairs.iter().map(|p| p.id.as_str()).collect::<Vec<_>>().as_slice() {
            return Err(Error::Data("frozen index does not cover the training pairs in order".into()));
        }
    }
    let src_max = model.config().max_src_len;
    let tgt_max = model.config().max_tgt_len;
    let queries: Vec<TokenSequence> = (0..pairs.len()).map(|i| pairs.source(i, src_max)).collect::<Result<_>>()?;
    let mut opt = Optimizer::new(cfg.learning_rate, cfg.clip_norm)?;
    let mut log = FinetuneLog { epochs: Vec::new(), records: Vec::new() };
    let mut live_index: Option<EmbeddingIndex> = None;
    for epoch in 0..cfg.epochs {
        if !cfg.no_retrieval && matches!(source, IndexSource::Live) && (cfg.refresh_index || live_index.is_none()) {
            live_index = Some(EmbeddingIndex::build(model, pairs, format!("live@epoch{epoch}"))?);
        }
        let index = match &source {
            IndexSource::Frozen(index) => Some(*index),
            IndexSource::Live => live_index.as_ref(),
        };
        let order = crate::corpus::epoch_order(items.len(), rng::derive(seeds.root, &[seeds.stream]), epoch as u64);
        let batches = train::batches(&order, cfg.batch_size, 1);
        let mut epoch_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for &item_idx in batch {
                let item = &items[item_idx];
                let q = item.query;
                let target = TokenSequence::wrap(item.target.clone(), tgt_max)?;
                let seed_of =
                    |j: usize| rng::derive(seeds.root, &[seeds.stream, epoch as u64, item_idx as u64, j as u64]);
                let context = || format!("epoch {epoch} step {step} query {}", pairs.get(q).id);
                let grads = if cfg.no_retrieval || index.is_none() {
                    let mut g = Graph::with_params(model.params());
                    let (logits, gold) =
                        model.teacher_forced_in(&mut g, queries[q].ids(), target.ids(), Mode::Train { seed: seed_of(0) })?;
                    let loss = g.cross_entropy(logits, &gold, PAD, Reduction::Sum)?;
                    epoch_sum += check_finite_loss(g.value(loss).item(), context)?;
                    g.backward(loss)?
                } else {
                    let index = index.unwrap();
                    let hits = index.top_k_for_row(q, cfg.k)?;
                    let inputs: Vec<AugmentedInput> = hits
                        .iter()
                        .map(|h| build_augmented_input(&pairs.get(q).code, h, pairs, src_max))
                        .collect::<Result<_>>()?;
                    let rows: Vec<&[f64]> = hits.iter().map(|h| index.row(h.row)).collect();
                    let dropout: Vec<u64> = (0..hits.len()).map(seed_of).collect();
                    let mut g = Graph::with_params(model.params());
                    let vars = composite_loss_in(model, &mut g, &queries[q], &inputs, &rows, &target, cfg, &dropout)?;
                    let combined = check_finite_loss(g.value(vars.combined).item(), context)?;
                    log.records.push(CompositeLossRecord {
                        epoch,
                        query_id: pairs.get(q).id.clone(),
                        exemplar_ids: inputs.iter().map(|a| a.exemplar_id.clone()).collect(),
                        losses: vars.losses.iter().map(|&v| g.value(v).item()).collect(),
                        weights: vars.weights.iter().map(|&v| g.value(v).item()).collect(),
                        combined,
                        k: inputs.len(),
                    });
                    epoch_sum += combined;
                    g.backward(vars.combined)?
                };
                model.params_mut().accumulate(&grads, scale);
            }
            opt.step(model.params_mut())?;
        }
        log.epochs.push(EpochStats { epoch, mean_loss: epoch_sum / items.len() as f64, steps: batches.len() });
        on_epoch(epoch, model)?;
    }
    Ok(log)
}

/// Phase-2 finetuning on the gold comments of `pairs`.
pub fn finetune(
    model: &mut Transformer,
    pairs: &EncodedPairs,
    cfg: &FinetuneConfig,
    source: IndexSource<'_>,
    seed: u64,
    on_epoch: &mut dyn FnMut(usize, &Transformer) -> Result<()>,
) -> Result<FinetuneLog> {
    let items = gold_items(pairs);
    train_composite(model, pairs, &items, cfg, source, SeedScope { root: seed, stream: rng::stream::FINETUNE }, on_epoch)
}

#[cfg(test)]
mod tests;

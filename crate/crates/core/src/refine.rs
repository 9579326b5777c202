//! Self-refinement: best-of-K candidate selection and finetuning on the winners.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CodeCommentPair, Split};
use crate::dataset::EncodedPairs;
use crate::error::{contract_err, Error, Result};
use crate::inference::Summarizer;
use crate::joint::{gold_items, train_composite, FinetuneConfig, FinetuneLog, IndexSource, SeedScope, TrainItem};
use crate::metrics::{eval_tokens, rouge_l};
use crate::model::{Strategy, Transformer};
use crate::rng;
use crate::vocab::Vocabulary;

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub ids: Vec<usize>,
    pub text: String,
    pub seed: u64,
    /// ROUGE-L against the reference.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub candidates: Vec<Candidate>,
    pub best: usize,
}

impl CandidateSet {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.best]
    }
}

/// Index of the highest-scoring `(score, seed)`; equal scores go to the lower seed.
pub fn best_index(scored: &[(f64, u64)]) -> Result<usize> {
    if scored.is_empty() {
        return contract_err("no candidates to choose from");
    }
    let mut best = 0;
    for (i, &(score, seed)) in scored.iter().enumerate().skip(1) {
        let (top, top_seed) = scored[best];
        if score > top || (score == top && seed < top_seed) {
            best = i;
        }
    }
    Ok(best)
}

/// Pick the candidate text with the highest ROUGE-L against `reference`.
/// Returns the index and its score; empty candidates score 0.
pub fn select_best(candidates: &[String], seeds: &[u64], reference: &str) -> Result<(usize, f64)> {
    if reference.trim().is_empty() {
        return contract_err("reference comment is empty");
    }
    if candidates.len() != seeds.len() {
        return contract_err(format!("{} candidates for {} seeds", candidates.len(), seeds.len()));
    }
    let r = eval_tokens(reference);
    let scored: Vec<(f64, u64)> =
        candidates.iter().zip(seeds).map(|(c, &s)| (rouge_l(&eval_tokens(c), &r, ROUGE_BETA), s)).collect();
    let best = best_index(&scored)?;
    Ok((best, scored[best].0))
}

/// Decoding settings for the candidate pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateConfig {
    /// Pool size; the first candidate is the greedy decode.
    pub count: usize,
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig { count: 5, temperature: 0.8, max_len: 64 }
    }
}

/// Seeds for the pool of one query: consecutive, so their order is the pool order.
pub fn candidate_seeds(root: u64, query: usize, count: usize) -> Vec<u64> {
    let base = rng::derive(root, &[rng::stream::CANDIDATES, query as u64]) >> 8;
    (0..count as u64).map(|i| base + i).collect()
}

/// Decode the pool for `code` and score it against `reference`.
pub fn sample_candidates(
    summarizer: &Summarizer<'_>,
    vocab: &Vocabulary,
    code: &[usize],
    query_id: &str,
    reference: &str,
    seeds: &[u64],
    cfg: &CandidateConfig,
) -> Result<CandidateSet> {
    if seeds.is_empty() {
        return contract_err("candidate pool must not be empty");
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::Config(format!("sampling temperature must be positive, got {}", cfg.temperature)));
    }
    let (input, _) = summarizer.input_for(code, Some(query_id))?;
    let mut texts = Vec::with_capacity(seeds.len());
    let mut ids = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let strategy = if i == 0 { Strategy::Greedy } else { Strategy::Sample { temperature: cfg.temperature, seed } };
        let out = summarizer.generator.generate(&input, strategy, cfg.max_len)?;
        texts.push(vocab.detokenize(out.body()));
        ids.push(out.body().to_vec());
    }
    let (best, _) = select_best(&texts, seeds, reference)?;
    let r = eval_tokens(reference);
    let candidates = ids
        .into_iter()
        .zip(texts)
        .zip(seeds)
        .map(|((ids, text), &seed)| Candidate { score: rouge_l(&eval_tokens(&text), &r, ROUGE_BETA), ids, text, seed })
        .collect();
    Ok(CandidateSet { query_id: query_id.to_string(), candidates, best })
}

/// Where the augmented dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_fingerprint: String,
    pub seed: u64,
    pub candidates: CandidateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub query_id: String,
    /// Position of the query among the training pairs.
    pub query: usize,
    pub target: Vec<usize>,
    pub text: String,
    pub score: f64,
    pub seed: u64,
}

/// Training queries paired with their selected candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDataset {
    pub provenance: Provenance,
    pub records: Vec<AugmentedRecord>,
}

/// Summary of one candidate pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionStats {
    pub mean_selected: f64,
    pub mean_greedy: f64,
}

/// Run the candidate pass over every training pair.
pub fn build_dataset(
    summarizer: &Summarizer<'_>,
    vocab: &Vocabulary,
    pairs: &EncodedPairs,
    cfg: &CandidateConfig,
    seed: u64,
    source_fingerprint: &str,
) -> Result<(AugmentedDataset, Vec<CandidateSet>)> {
    let mut records = Vec::with_capacity(pairs.len());
    let mut sets = Vec::with_capacity(pairs.len());
    for i in 0..pairs.len() {
        let p = pairs.get(i);
        let seeds = candidate_seeds(seed, i, cfg.count);
        let set = sample_candidates(summarizer, vocab, &p.code, &p.id, &p.reference, &seeds, cfg)?;
        let best = set.best();
        records.push(AugmentedRecord {
            query_id: p.id.clone(),
            query: i,
            target: best.ids.clone(),
            text: best.text.clone(),
            score: best.score,
            seed: best.seed,
        });
        sets.push(set);
    }
    let provenance = Provenance { source_fingerprint: source_fingerprint.to_string(), seed, candidates: cfg.clone() };
    Ok((AugmentedDataset { provenance, records }, sets))
}

pub fn selection_stats(sets: &[CandidateSet]) -> SelectionStats {
    let n = sets.len().max(1) as f64;
    SelectionStats {
        mean_selected: sets.iter().map(|s| s.best().score).sum::<f64>() / n,
        mean_greedy: sets.iter().map(|s| s.candidates[0].score).sum::<f64>() / n,
    }
}

impl AugmentedDataset {
    /// Write as a corpus file: a provenance header line, then one train
    /// record per query with the selected candidate as its comment.
    pub fn save(&self, path: &Path, originals: &[CodeCommentPair]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut w, &serde_json::json!({ "provenance": self.provenance }))?;
        w.write_all(b"\n")?;
        for r in &self.records {
            let code = originals
                .iter()
                .find(|p| p.id == r.query_id)
                .ok_or_else(|| Error::Data(format!("augmented record for unknown pair {}", r.query_id)))?;
            let pair = CodeCommentPair { id: r.query_id.clone(), code: code.code.clone(), comment: r.text.clone(), split: Split::Train };
            serde_json::to_writer(&mut w, &pair)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub candidates: CandidateConfig,
    /// Also train on the gold comments.
    pub mix_gold: bool,
    pub train: FinetuneConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            candidates: CandidateConfig::default(),
            mix_gold: false,
            train: FinetuneConfig { epochs: 5, learning_rate: 1e-5, ..FinetuneConfig::default() },
        }
    }
}

/// Finetune on the selected candidates with the composite loss.
pub fn refine(
    model: &mut Transformer,
    pairs: &EncodedPairs,
    dataset: &AugmentedDataset,
    cfg: &RefineConfig,
    source: IndexSource<'_>,
    seed: u64,
    on_epoch: &mut dyn FnMut(usize, &Transformer) -> Result<()>,
) -> Result<FinetuneLog> {
    if dataset.records.is_empty() {
        return Err(Error::Data("augmented dataset is empty".into()));
    }
    let mut items: Vec<TrainItem> =
        dataset.records.iter().map(|r| TrainItem { query: r.query, target: r.target.clone() }).collect();
    if cfg.mix_gold {
        items.extend(gold_items(pairs));
    }
    train_composite(model, pairs, &items, &cfg.train, source, SeedScope { root: seed, stream: rng::stream::REFINE }, on_epoch)
}

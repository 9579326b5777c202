//! Phase drivers, evaluation and the end-to-end run.

pub mod ablate;
pub mod config;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use ablate::{ablate, k_sweep, parse_range, AblationRow};
pub use config::{Arm, PipelineConfig};

use crate::contrastive::{pretrain, PretrainConfig, PretrainEpoch};
use crate::corpus::{load_corpus, CodeCommentPair, LoadOptions, Split};
use crate::dataset::EncodedPairs;
use crate::error::{Error, Result};
use crate::inference::{Retrieval, Summarizer};
use crate::joint::{finetune, CompositeLossRecord, FinetuneConfig, FinetuneLog, IndexSource};
use crate::metrics::{eval_tokens, evaluate, rouge_l, MetricReport};
use crate::model::{Checkpoint, Phase, Strategy, Transformer};
use crate::refine::{build_dataset, refine, selection_stats, RefineConfig, SelectionStats};
use crate::retriever::EmbeddingIndex;
use crate::rng;
use crate::synth;
use crate::train::EpochStats;
use crate::vocab::Vocabulary;

/// Corpus splits encoded with one vocabulary.
pub struct Workspace {
    pub pairs: Vec<CodeCommentPair>,
    pub vocab: Vocabulary,
    pub train: EncodedPairs,
    pub valid: EncodedPairs,
    pub test: EncodedPairs,
}

/// Read the configured corpus, or generate the synthetic one.
pub fn load_pairs(data: &config::DataSection) -> Result<Vec<CodeCommentPair>> {
    match &data.corpus {
        Some(path) => {
            let opts = LoadOptions { schema: data.schema()?, dedup: data.dedup, ..LoadOptions::default() };
            Ok(load_corpus(path, &opts)?.pairs)
        }
        None => synth::generate(&data.synth),
    }
}

impl Workspace {
    /// Encode `pairs` with `vocab`, or with a vocabulary built from the training split.
    pub fn new(pairs: Vec<CodeCommentPair>, vocab: Option<Vocabulary>, min_frequency: usize) -> Result<Self> {
        let of = |s: Split| pairs.iter().filter(move |p| p.split == s);
        if of(Split::Train).next().is_none() {
            return Err(Error::Data("corpus has no training pairs".into()));
        }
        let vocab = vocab.unwrap_or_else(|| Vocabulary::build(of(Split::Train), min_frequency));
        let train = EncodedPairs::new(of(Split::Train), &vocab)?;
        let valid = EncodedPairs::new(of(Split::Valid), &vocab)?;
        let test = EncodedPairs::new(of(Split::Test), &vocab)?;
        Ok(Workspace { pairs, vocab, train, valid, test })
    }

    pub fn split(&self, split: Split) -> &EncodedPairs {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Freshly initialised weights.
pub fn init_checkpoint(ws: &Workspace, model: &config::ModelSection, seed: u64) -> Result<Checkpoint> {
    let cfg = model.build(ws.vocab.len())?;
    let m = Transformer::init(cfg, rng::derive(seed, &[rng::stream::INIT]))?;
    Checkpoint::seal(m, ws.vocab.clone(), Phase::Init, None)
}

fn check_vocab(ck: &Checkpoint, ws: &Workspace) -> Result<()> {
    if ck.vocab != ws.vocab {
        return Err(Error::Data("checkpoint vocabulary differs from the workspace vocabulary".into()));
    }
    Ok(())
}

pub fn run_pretrain(parent: &Checkpoint, ws: &Workspace, cfg: &PretrainConfig, seed: u64) -> Result<(Checkpoint, Vec<PretrainEpoch>)> {
    check_vocab(parent, ws)?;
    let mut model = parent.model.clone();
    let log = pretrain(&mut model, &ws.train, cfg, seed)?;
    Ok((Checkpoint::seal(model, ws.vocab.clone(), Phase::Pretrain, Some(parent))?, log))
}

/// Index over the training split from `retriever`, stamped with its fingerprint.
pub fn build_index(retriever: &Checkpoint, ws: &Workspace) -> Result<EmbeddingIndex> {
    EmbeddingIndex::build(&retriever.model, &ws.train, retriever.fingerprint.clone())
}

fn epoch_saver<'a>(
    path: Option<&'a Path>,
    vocab: &'a Vocabulary,
    phase: Phase,
    parent: &'a Checkpoint,
) -> impl FnMut(usize, &Transformer) -> Result<()> + 'a {
    move |_, model| match path {
        Some(p) => Checkpoint::seal(model.clone(), vocab.clone(), phase, Some(parent))?.save(p),
        None => Ok(()),
    }
}

/// Phase 2. With `frozen` set, exemplars come from that checkpoint's fixed
/// index instead of the model being trained.
pub fn run_finetune(
    parent: &Checkpoint,
    frozen: Option<&Checkpoint>,
    ws: &Workspace,
    cfg: &FinetuneConfig,
    seed: u64,
    epoch_path: Option<&Path>,
) -> Result<(Checkpoint, FinetuneLog)> {
    check_vocab(parent, ws)?;
    let mut model = parent.model.clone();
    let frozen_index = frozen.map(|r| build_index(r, ws)).transpose()?;
    let source = frozen_index.as_ref().map_or(IndexSource::Live, IndexSource::Frozen);
    let mut save = epoch_saver(epoch_path, &ws.vocab, Phase::Finetune, parent);
    let log = finetune(&mut model, &ws.train, cfg, source, seed, &mut save)?;
    Ok((Checkpoint::seal(model, ws.vocab.clone(), Phase::Finetune, Some(parent))?, log))
}

#[derive(Clone, Debug, Serialize)]
pub struct RefineOutcome {
    pub log: FinetuneLog,
    pub selection: SelectionStats,
}

/// Phase 3: candidate pass with the phase-2 model, then finetuning on the winners.
pub fn run_refine(
    parent: &Checkpoint,
    frozen: Option<&Checkpoint>,
    ws: &Workspace,
    cfg: &RefineConfig,
    seed: u64,
    daug_path: Option<&Path>,
    epoch_path: Option<&Path>,
) -> Result<(Checkpoint, RefineOutcome)> {
    check_vocab(parent, ws)?;
    let retriever = frozen.unwrap_or(parent);
    let index = build_index(retriever, ws)?;
    let summarizer =
        Summarizer::with_retrieval(&parent.model, Retrieval { retriever: &retriever.model, index: &index, corpus: &ws.train })?;
    let (dataset, sets) = build_dataset(&summarizer, &ws.vocab, &ws.train, &cfg.candidates, seed, &parent.fingerprint)?;
    if let Some(p) = daug_path {
        let originals: Vec<CodeCommentPair> = ws.pairs.iter().filter(|p| p.split == Split::Train).cloned().collect();
        dataset.save(p, &originals)?;
    }
    let mut model = parent.model.clone();
    let frozen_index = frozen.map(|_| index.clone());
    let source = frozen_index.as_ref().map_or(IndexSource::Live, IndexSource::Frozen);
    let mut save = epoch_saver(epoch_path, &ws.vocab, Phase::Refine, parent);
    let log = refine(&mut model, &ws.train, &dataset, cfg, source, seed, &mut save)?;
    let ck = Checkpoint::seal(model, ws.vocab.clone(), Phase::Refine, Some(parent))?;
    Ok((ck, RefineOutcome { log, selection: selection_stats(&sets) }))
}

/// One generated comment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
    pub exemplar_id: Option<String>,
    pub exemplar_score: Option<f64>,
}

/// Generation settings for evaluation.
#[derive(Clone, Copy, Debug)]
pub struct DecodeSettings {
    pub max_len: usize,
    pub beam_width: usize,
}

impl DecodeSettings {
    pub fn strategy(&self) -> Strategy {
        if self.beam_width <= 1 {
            Strategy::Greedy
        } else {
            Strategy::Beam { width: self.beam_width }
        }
    }
}

/// Generate a comment for every pair of `queries`. Query ids that also name
/// an index row are excluded from their own retrieval.
pub fn predict(summarizer: &Summarizer<'_>, vocab: &Vocabulary, queries: &EncodedPairs, decode: DecodeSettings) -> Result<Vec<Prediction>> {
    queries
        .iter()
        .map(|p| {
            let out = summarizer.summarize(&p.code, Some(&p.id), decode.strategy(), decode.max_len)?;
            Ok(Prediction {
                id: p.id.clone(),
                hypothesis: vocab.detokenize(&out.ids),
                reference: p.reference.clone(),
                exemplar_id: out.hit.as_ref().map(|h| h.pair_id.clone()),
                exemplar_score: out.hit.map(|h| h.score),
            })
        })
        .collect()
}

pub fn score(predictions: &[Prediction], metrics: &crate::metrics::MetricConfig) -> Result<MetricReport> {
    let ids: Vec<String> = predictions.iter().map(|p| p.id.clone()).collect();
    let hyps: Vec<String> = predictions.iter().map(|p| p.hypothesis.clone()).collect();
    let refs: Vec<String> = predictions.iter().map(|p| p.reference.clone()).collect();
    evaluate(&ids, &hyps, &refs, metrics)
}

/// A generator together with the retriever whose index feeds it.
pub struct System<'a> {
    pub generator: &'a Checkpoint,
    /// `None` for bare-query generation.
    pub retriever: Option<&'a Checkpoint>,
}

impl System<'_> {
    /// Predictions and scores on `queries`, retrieving from the training split.
    pub fn evaluate(&self, ws: &Workspace, queries: &EncodedPairs, eval: &config::EvalSection) -> Result<(Vec<Prediction>, MetricReport)> {
        let decode = DecodeSettings { max_len: eval.max_len, beam_width: eval.beam_width };
        let index = self.retriever.map(|r| build_index(r, ws)).transpose()?;
        let summarizer = match (&index, self.retriever) {
            (Some(index), Some(r)) => Summarizer::with_retrieval(
                &self.generator.model,
                Retrieval { retriever: &r.model, index, corpus: &ws.train },
            )?,
            _ => Summarizer::bare(&self.generator.model),
        };
        let predictions = predict(&summarizer, &ws.vocab, queries, decode)?;
        let report = score(&predictions, &eval.metrics)?;
        Ok((predictions, report))
    }
}

/// ROUGE-L of the top-1 retrieved comment against each query's reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalScore {
    pub id: String,
    pub exemplar_id: String,
    pub similarity: f64,
    pub rouge_l: f64,
}

pub fn retrieval_scores(retriever: &Transformer, index: &EmbeddingIndex, corpus: &EncodedPairs, queries: &EncodedPairs) -> Result<Vec<RetrievalScore>> {
    let s = Summarizer::with_retrieval(retriever, Retrieval { retriever, index, corpus })?;
    queries
        .iter()
        .map(|q| {
            let hit = s.retrieve(&q.code, Some(&q.id))?.expect("retrieval is configured");
            let exemplar = corpus.by_id(&hit.pair_id)?;
            Ok(RetrievalScore {
                id: q.id.clone(),
                exemplar_id: hit.pair_id.clone(),
                similarity: hit.score,
                rouge_l: rouge_l(&eval_tokens(&exemplar.reference), &eval_tokens(&q.reference), crate::refine::ROUGE_BETA),
            })
        })
        .collect()
}

/// Holds the output directory for one run; removed on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("run.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Config(format!("{} is locked by another run ({})", dir.display(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub fingerprint: String,
    pub parent: Option<String>,
    /// Empty when the checkpoint was reused.
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NamedReport {
    pub name: String,
    pub report: MetricReport,
}

/// Everything a run reports; reproducible from the embedded config and seed.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub arm: Arm,
    pub seed: u64,
    pub phases: Vec<PhaseSummary>,
    pub selection: Option<SelectionStats>,
    pub evaluations: Vec<NamedReport>,
}

impl RunReport {
    pub fn evaluation(&self, name: &str) -> Option<&MetricReport> {
        self.evaluations.iter().find(|e| e.name == name).map(|e| &e.report)
    }

    /// The final model on the test split.
    pub fn test(&self) -> Option<&MetricReport> {
        self.evaluation("final.test")
    }
}

pub struct PipelineOutcome {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
    pub finetune_records: Vec<CompositeLossRecord>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load `path` if resuming and it continues from `parent`.
fn reuse(cfg: &PipelineConfig, path: &Path, phase: Phase, parent: &Checkpoint) -> Result<Option<Checkpoint>> {
    if !cfg.resume || !path.exists() {
        return Ok(None);
    }
    let ck = Checkpoint::load_phase(path, phase)?;
    Ok((ck.parent.as_deref() == Some(parent.fingerprint.as_str())).then_some(ck))
}

/// All three phases, then evaluation on the test split.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let _lock = RunLock::acquire(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let ws = Workspace::new(load_pairs(&cfg.data)?, None, cfg.data.min_frequency)?;
    if ws.test.is_empty() {
        return Err(Error::Data("corpus has no test pairs".into()));
    }
    let seed = cfg.seed;
    let mut phases = Vec::new();
    let summary = |ck: &Checkpoint, epochs: Vec<EpochStats>| PhaseSummary {
        phase: ck.phase,
        fingerprint: ck.fingerprint.clone(),
        parent: ck.parent.clone(),
        epochs,
    };

    let init = init_checkpoint(&ws, &cfg.model, seed)?;
    init.save(&dir.join("init.ckpt"))?;
    phases.push(summary(&init, vec![]));

    let pretrained = if cfg.pretrain.skip {
        init
    } else {
        let path = dir.join("pretrain.ckpt");
        let (ck, epochs) = match reuse(cfg, &path, Phase::Pretrain, &init)? {
            Some(ck) => (ck, vec![]),
            None => {
                let (ck, log) = run_pretrain(&init, &ws, &cfg.pretrain.params, seed)?;
                ck.save(&path)?;
                write_json(&dir.join("pretrain_log.json"), &log)?;
                (ck, log.into_iter().map(|e| e.stats).collect())
            }
        };
        phases.push(summary(&ck, epochs));
        ck
    };

    // an independent retriever stays at its pretrained weights
    let frozen = (!cfg.joint_retriever()).then_some(&pretrained);
    let retriever_for = |generator: &'_ Checkpoint| -> Option<Checkpoint> {
        if cfg.finetune.no_retrieval {
            None
        } else {
            Some(frozen.cloned().unwrap_or_else(|| generator.clone()))
        }
    };

    let path = dir.join("finetune.ckpt");
    let (tuned, records) = match reuse(cfg, &path, Phase::Finetune, &pretrained)? {
        Some(ck) => {
            phases.push(summary(&ck, vec![]));
            (ck, vec![])
        }
        None => {
            let (ck, log) = run_finetune(&pretrained, frozen, &ws, &cfg.finetune, seed, Some(&path))?;
            ck.save(&path)?;
            write_jsonl(&dir.join("finetune_records.jsonl"), &log.records)?;
            phases.push(summary(&ck, log.epochs));
            (ck, log.records)
        }
    };

    let mut evaluations = Vec::new();
    let mut evaluate_as = |name: &str, ck: &Checkpoint, queries: &EncodedPairs| -> Result<Vec<Prediction>> {
        let retriever = retriever_for(ck);
        let system = System { generator: ck, retriever: retriever.as_ref() };
        let (preds, report) = system.evaluate(&ws, queries, &cfg.eval)?;
        evaluations.push(NamedReport { name: name.to_string(), report });
        Ok(preds)
    };

    let mut selection = None;
    let last = if cfg.refine.skip {
        tuned
    } else {
        evaluate_as("finetune.test", &tuned, &ws.test)?;
        if cfg.eval.train_split {
            evaluate_as("finetune.train", &tuned, &ws.train)?;
        }
        let path = dir.join("refine.ckpt");
        match reuse(cfg, &path, Phase::Refine, &tuned)? {
            Some(ck) => {
                phases.push(summary(&ck, vec![]));
                ck
            }
            None => {
                let daug = dir.join("daug.jsonl");
                let (ck, outcome) = run_refine(&tuned, frozen, &ws, &cfg.refine.params, seed, Some(&daug), Some(&path))?;
                ck.save(&path)?;
                phases.push(summary(&ck, outcome.log.epochs));
                selection = Some(outcome.selection);
                ck
            }
        }
    };

    let preds = evaluate_as("final.test", &last, &ws.test)?;
    write_jsonl(&dir.join("predictions.jsonl"), &preds)?;
    if cfg.eval.train_split {
        evaluate_as("final.train", &last, &ws.train)?;
    }
    last.save(&dir.join("final.ckpt"))?;
    let report = RunReport { config_hash: cfg.hash(), arm: cfg.arm, seed, phases, selection, evaluations };
    if let Some(test) = report.test() {
        test.write_csv(File::create(dir.join("test_scores.csv"))?)?;
    }
    write_json(&dir.join("report.json"), &report)?;
    Ok(PipelineOutcome { checkpoint: last, report, finetune_records: records })
}

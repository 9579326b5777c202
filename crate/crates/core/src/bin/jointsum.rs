use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jointsum::corpus::Split;
use jointsum::inference::{Retrieval, Summarizer};
use jointsum::joint::Weighting;
use jointsum::metrics::evaluate;
use jointsum::model::{Checkpoint, Phase};
use jointsum::pipeline::{
    ablate, build_index, init_checkpoint, k_sweep, load_pairs, parse_range, retrieval_scores, run_finetune, run_pretrain,
    run_pipeline, run_refine, Arm, DecodeSettings, PipelineConfig, Workspace,
};
use jointsum::retriever::EmbeddingIndex;
use jointsum::vocab::TextKind;
use jointsum::{Error, Result};

#[derive(Parser)]
#[command(name = "jointsum", version, about = "Retrieval-augmented code comment generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Line-delimited JSON corpus (defaults to the configured one).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus field renames, e.g. code=src,comment=doc.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(c) = &self.corpus {
            cfg.data.corpus = Some(c.clone());
        }
        if let Some(s) = &self.schema {
            cfg.data.schema = Some(s.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive encoder pretraining.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of fresh weights.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint retriever-generator finetuning.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// live, normalized, retrieval or uniform.
        #[arg(long)]
        weighting: Option<String>,
        /// Keep negative similarity weights.
        #[arg(long)]
        no_floor: bool,
        /// Retrieve with this fixed checkpoint instead of the model in training.
        #[arg(long)]
        retriever: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Best-of-K candidate selection and finetuning on the winners.
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Candidates per query.
        #[arg(long = "K")]
        candidates: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Train on the gold comments as well.
        #[arg(long)]
        mix_gold: bool,
        /// Where to write the selected candidates.
        #[arg(long)]
        daug: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate comments for code read from a file, one snippet per line.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        code: Option<String>,
        /// Index cache; built from the training split and written here if missing.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Generate from the bare query.
        #[arg(long)]
        no_retrieval: bool,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypotheses against references, one per line.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// JSON report; per-example scores go next to it as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// ROUGE-L of each query's top-1 retrieved comment.
    EvaluateRetrieval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest training pairs for a snippet.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        code: String,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Ablation arms side by side, or a sweep over k.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated arm names; all five when omitted.
        #[arg(long)]
        arms: Option<String>,
        /// Inclusive range of k values, e.g. 1..5.
        #[arg(long)]
        k_sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All three phases and test-split evaluation.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        arm: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        skip_pretrain: bool,
        #[arg(long)]
        skip_refine: bool,
        /// Reuse phase checkpoints found in the output directory.
        #[arg(long)]
        resume: bool,
    },
}

fn parse_weighting(s: &str) -> Result<Weighting> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown weighting {s:?}")))
}

fn workspace(cfg: &PipelineConfig, ck: Option<&Checkpoint>) -> Result<Workspace> {
    Workspace::new(load_pairs(&cfg.data)?, ck.map(|c| c.vocab.clone()), cfg.data.min_frequency)
}

fn save(ck: &Checkpoint, out: &Path) -> Result<()> {
    ck.save(out)?;
    println!("{} checkpoint {} -> {}", ck.phase, ck.fingerprint, out.display());
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    BufReader::new(File::open(path)?).lines().map(|l| l.map_err(Error::from)).collect()
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common, ckpt, epochs, batch_size, lr, temperature, out } => {
            let mut cfg = common.load()?;
            let p = &mut cfg.pretrain.params;
            p.epochs = epochs.unwrap_or(p.epochs);
            p.batch_size = batch_size.unwrap_or(p.batch_size);
            p.learning_rate = lr.unwrap_or(p.learning_rate);
            p.temperature = temperature.unwrap_or(p.temperature);
            cfg.validate()?;
            let parent = ckpt.as_deref().map(|p| Checkpoint::load_phase(p, Phase::Init)).transpose()?;
            let ws = workspace(&cfg, parent.as_ref())?;
            let parent = match parent {
                Some(p) => p,
                None => init_checkpoint(&ws, &cfg.model, cfg.seed)?,
            };
            let (ck, log) = run_pretrain(&parent, &ws, &cfg.pretrain.params, cfg.seed)?;
            for e in &log {
                println!("epoch {} loss {:.4} (code {:.4}, comment {:.4})", e.stats.epoch, e.stats.mean_loss, e.mean_q2q, e.mean_q2c);
            }
            save(&ck, &out)
        }
        Command::Finetune { common, ckpt, k, epochs, batch_size, lr, weighting, no_floor, retriever, out } => {
            let mut cfg = common.load()?;
            let f = &mut cfg.finetune;
            f.k = k.unwrap_or(f.k);
            f.epochs = epochs.unwrap_or(f.epochs);
            f.batch_size = batch_size.unwrap_or(f.batch_size);
            f.learning_rate = lr.unwrap_or(f.learning_rate);
            if let Some(w) = weighting {
                f.weighting = parse_weighting(&w)?;
            }
            f.floor_weights &= !no_floor;
            cfg.validate()?;
            let parent = Checkpoint::load(&ckpt)?;
            let frozen = retriever.as_deref().map(Checkpoint::load).transpose()?;
            let ws = workspace(&cfg, Some(&parent))?;
            let (ck, log) = run_finetune(&parent, frozen.as_ref(), &ws, &cfg.finetune, cfg.seed, Some(&out))?;
            for e in &log.epochs {
                println!("epoch {} loss {:.4}", e.epoch, e.mean_loss);
            }
            save(&ck, &out)
        }
        Command::Refine { common, ckpt, candidates, epochs, lr, temperature, mix_gold, daug, out } => {
            let mut cfg = common.load()?;
            let r = &mut cfg.refine.params;
            r.candidates.count = candidates.unwrap_or(r.candidates.count);
            r.candidates.temperature = temperature.unwrap_or(r.candidates.temperature);
            r.train.epochs = epochs.unwrap_or(r.train.epochs);
            r.train.learning_rate = lr.unwrap_or(r.train.learning_rate);
            r.mix_gold |= mix_gold;
            cfg.validate()?;
            let parent = Checkpoint::load_phase(&ckpt, Phase::Finetune)?;
            let ws = workspace(&cfg, Some(&parent))?;
            let (ck, outcome) = run_refine(&parent, None, &ws, &cfg.refine.params, cfg.seed, daug.as_deref(), Some(&out))?;
            println!(
                "selected ROUGE-L {:.4} vs greedy {:.4}",
                outcome.selection.mean_selected, outcome.selection.mean_greedy
            );
            save(&ck, &out)
        }
        Command::Infer { common, ckpt, input, code, index, no_retrieval, beam, out } => {
            let cfg = common.load()?;
            let ck = Checkpoint::load(&ckpt)?;
            let ws = workspace(&cfg, Some(&ck))?;
            let snippets = match (input, code) {
                (Some(p), None) => read_lines(&p)?,
                (None, Some(c)) => vec![c],
                _ => return Err(Error::Config("give exactly one of --input and --code".into())),
            };
            let idx = if no_retrieval {
                None
            } else {
                Some(match index {
                    Some(p) if p.exists() => {
                        let idx = EmbeddingIndex::load(&p)?;
                        idx.check_fingerprint(&ck.fingerprint)?;
                        idx
                    }
                    other => {
                        let idx = build_index(&ck, &ws)?;
                        if let Some(p) = other {
                            idx.save(&p)?;
                        }
                        idx
                    }
                })
            };
            let summarizer = match &idx {
                Some(index) => Summarizer::with_retrieval(&ck.model, Retrieval { retriever: &ck.model, index, corpus: &ws.train })?,
                None => Summarizer::bare(&ck.model),
            };
            let decode = DecodeSettings { max_len: cfg.eval.max_len, beam_width: beam };
            let mut w = output(out.as_deref())?;
            for line in &snippets {
                let ids = ck.vocab.encode(line, TextKind::Code);
                let s = summarizer.summarize(&ids, None, decode.strategy(), decode.max_len)?;
                writeln!(w, "{}", ck.vocab.detokenize(&s.ids))?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Evaluate { hyp, reference, out } => {
            let hyps = read_lines(&hyp)?;
            let refs = read_lines(&reference)?;
            if hyps.len() != refs.len() {
                return Err(Error::Data(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
            }
            let ids: Vec<String> = (1..=hyps.len()).map(|i| i.to_string()).collect();
            let report = evaluate(&ids, &hyps, &refs, &Default::default())?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            report.write_csv(File::create(out.with_extension("csv"))?)?;
            println!("{}", report.summary());
            Ok(())
        }
        Command::EvaluateRetrieval { common, ckpt, split, out } => {
            let cfg = common.load()?;
            let ck = Checkpoint::load(&ckpt)?;
            let ws = workspace(&cfg, Some(&ck))?;
            let split: Split = split.parse().map_err(Error::Config)?;
            let index = build_index(&ck, &ws)?;
            let scores = retrieval_scores(&ck.model, &index, &ws.train, ws.split(split))?;
            let mut w = csv::Writer::from_writer(File::create(&out)?);
            for s in &scores {
                w.serialize(s).map_err(|e| Error::Format(e.to_string()))?;
            }
            w.flush()?;
            let mean = scores.iter().map(|s| s.rouge_l).sum::<f64>() / scores.len().max(1) as f64;
            println!("n={} mean retrieved-comment ROUGE-L={mean:.4}", scores.len());
            Ok(())
        }
        Command::Retrieve { common, ckpt, code, k } => {
            let cfg = common.load()?;
            let ck = Checkpoint::load(&ckpt)?;
            let ws = workspace(&cfg, Some(&ck))?;
            let index = build_index(&ck, &ws)?;
            let query = ck.vocab.tokenize(&code, TextKind::Code, ck.model.config().max_src_len)?;
            for hit in index.top_k(&ck.model.embed(&query)?, k, None)? {
                let pair = ws.train.by_id(&hit.pair_id)?;
                println!("{}\t{:.4}\t{}\t{}", hit.rank, hit.score, hit.pair_id, pair.reference);
            }
            Ok(())
        }
        Command::Ablate { common, arms, k_sweep: sweep, out } => {
            let mut cfg = common.load()?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let rows = match (sweep, arms) {
                (Some(range), None) => k_sweep(&cfg, &parse_range(&range)?)?,
                (None, arms) => {
                    let arms = match arms {
                        Some(list) => list.split(',').map(|a| Arm::parse(a.trim())).collect::<Result<Vec<_>>>()?,
                        None => Arm::ALL.to_vec(),
                    };
                    ablate(&cfg, &arms)?
                }
                (Some(_), Some(_)) => return Err(Error::Config("--arms and --k-sweep are exclusive".into())),
            };
            for r in rows {
                println!(
                    "{:<22} k={} C-BLEU={:.4} ROUGE-L={:.4} METEOR={:.4} CIDEr={:.4}",
                    r.arm, r.k, r.corpus_bleu, r.rouge_l, r.meteor, r.cider
                );
            }
            Ok(())
        }
        Command::Run { common, out, arm, k, skip_pretrain, skip_refine, resume } => {
            let mut cfg = common.load()?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(a) = arm {
                cfg = cfg.for_arm(Arm::parse(&a)?);
            }
            if let Some(k) = k {
                cfg.finetune.k = k;
                cfg.refine.params.train.k = k;
            }
            cfg.pretrain.skip |= skip_pretrain;
            cfg.refine.skip |= skip_refine;
            cfg.resume |= resume;
            let outcome = run_pipeline(&cfg)?;
            for e in &outcome.report.evaluations {
                println!("{:<15} {}", e.name, e.report.summary());
            }
            println!("report in {}", cfg.output_dir.join("report.json").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

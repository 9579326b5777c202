//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are pinned below.

mod oracles;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jointsum::autodiff::gradcheck::{check_inputs, check_params};
use jointsum::autodiff::{Graph, ParamId, Reduction};
use jointsum::contrastive::{loss_q2c, loss_q2q, NegativeViews};
use jointsum::dataset::EncodedPairs;
use jointsum::joint::{build_augmented_input, composite_loss_in, finetune, FinetuneConfig, IndexSource, Weighting};
use jointsum::metrics::{self, cider, corpus_bleu, eval_tokens, meteor, rouge_l, sentence_bleu, MeteorParams, Smoothing};
use jointsum::model::{Mode, Transformer, TransformerConfig};
use jointsum::pipeline::{ablate, k_sweep, parse_range, run_pipeline, Arm, PipelineConfig};
use jointsum::retriever::EmbeddingIndex;
use jointsum::synth::{self, SynthConfig};
use jointsum::tensor::Tensor;
use jointsum::vocab::{Vocabulary, PAD};

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET_SECS: f64 = 60.0;
const CLOSED_FORM_TOL: f64 = 1e-9;
const RECORD_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-9;
const ROUGE_FIXTURE_TOL: f64 = 1e-4;
const OVERFIT_BLEU: f64 = 0.8;
const OVERFIT_EXACT: f64 = 0.8;
const TOPK_INSTANCES: usize = 1000;
const RANDOM_METRIC_PAIRS: usize = 150;

const TOY: &str = include_str!("../examples/toy.toml");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn toy_pairs(n: usize, seed: u64) -> (Vocabulary, EncodedPairs) {
    let pairs = synth::generate(&SynthConfig::train_only(n, seed)).unwrap();
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab).unwrap();
    (vocab, enc)
}

fn small_model(vocab: usize, dropout_p: f64, seed: u64) -> Transformer {
    let cfg = TransformerConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ff_dim: 12,
        vocab_size: vocab,
        max_src_len: 48,
        max_tgt_len: 16,
        dropout_p,
    };
    Transformer::init(cfg, seed).unwrap()
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for _ in 0..3 {
        let (m, k, n) = (rng.gen_range(2..5), rng.gen_range(2..5), rng.gen_range(2..5));
        let a = random_tensor(&mut rng, &[m, k]);
        let b = random_tensor(&mut rng, &[k, n]);
        let w = random_tensor(&mut rng, &[m, n]);
        let r = check_inputs(&[a, b, w.clone()], h, |g, v| {
            let p = g.matmul(v[0], v[1])?;
            let q = g.mul(p, v[2])?;
            g.sum(q)
        });
        worst.push(("matmul", r.unwrap().max_error()));

        let x = random_tensor(&mut rng, &[m, n]);
        for axis in [0, 1] {
            let r = check_inputs(&[x.clone(), w.clone()], h, |g, v| {
                let s = g.softmax(v[0], axis)?;
                let q = g.mul(s, v[1])?;
                g.sum(q)
            });
            worst.push(("softmax", r.unwrap().max_error()));
        }

        let gain = random_tensor(&mut rng, &[n]);
        let bias = random_tensor(&mut rng, &[n]);
        let r = check_inputs(&[x.clone(), gain, bias, w.clone()], h, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let q = g.mul(y, v[3])?;
            g.sum(q)
        });
        worst.push(("layer-norm", r.unwrap().max_error()));

        let (t, d) = (rng.gen_range(2..5), rng.gen_range(2..5));
        let q = random_tensor(&mut rng, &[t, d]);
        let kk = random_tensor(&mut rng, &[t, d]);
        let val = random_tensor(&mut rng, &[t, d]);
        let wo = random_tensor(&mut rng, &[t, d]);
        let mask: Vec<bool> = (0..t * t).map(|i| i % t <= i / t).collect();
        let r = check_inputs(&[q, kk, val, wo], h, |g, v| {
            let s = g.matmul_t(v[0], v[1])?;
            let s = g.scale(s, 1.0 / (d as f64).sqrt())?;
            let p = g.masked_softmax(s, &mask)?;
            let o = g.matmul(p, v[2])?;
            let z = g.mul(o, v[3])?;
            g.sum(z)
        });
        worst.push(("attention", r.unwrap().max_error()));

        let u = random_tensor(&mut rng, &[d]);
        let v2 = random_tensor(&mut rng, &[d]);
        let r = check_inputs(&[u, v2], h, |g, v| g.cosine_similarity(v[0], v[1]));
        worst.push(("cosine", r.unwrap().max_error()));

        let vocab = rng.gen_range(3..7);
        let logits = random_tensor(&mut rng, &[4, vocab]);
        let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..vocab)).collect();
        for red in [Reduction::Mean, Reduction::Sum] {
            let r = check_inputs(&[logits.clone()], h, |g, v| g.cross_entropy(v[0], &targets, 0, red));
            worst.push(("cross-entropy", r.unwrap().max_error()));
        }

        let bsz = rng.gen_range(2..5);
        let first = random_tensor(&mut rng, &[bsz, d]);
        let second = random_tensor(&mut rng, &[bsz, d]);
        for negatives in [NegativeViews::First, NegativeViews::Second] {
            let r = check_inputs(&[first.clone(), second.clone()], h, |g, v| {
                let x = g.normalize_rows(v[0])?;
                let y = g.normalize_rows(v[1])?;
                loss_q2q(g, x, y, 0.2, negatives)
            });
            worst.push(("code-code contrastive", r.unwrap().max_error()));
        }
        let r = check_inputs(&[first, second], h, |g, v| {
            let x = g.normalize_rows(v[0])?;
            let y = g.normalize_rows(v[1])?;
            loss_q2c(g, x, y, 0.2)
        });
        worst.push(("code-comment contrastive", r.unwrap().max_error()));
    }

    // composite loss through the whole model, for every weighting scheme
    let (_, enc) = toy_pairs(6, 4);
    let vocab_size = enc.iter().flat_map(|p| p.code.iter().chain(&p.comment)).max().unwrap() + 1;
    let model = small_model(vocab_size.max(16), 0.0, 9);
    let index = EmbeddingIndex::build(&model, &enc, "gradcheck").unwrap();
    let max = model.config().max_src_len;
    let hits = index.top_k_for_row(3, 2).unwrap();
    let inputs: Vec<_> = hits.iter().map(|hh| build_augmented_input(&enc.get(3).code, hh, &enc, max).unwrap()).collect();
    let rows: Vec<&[f64]> = hits.iter().map(|hh| index.row(hh.row)).collect();
    let query = enc.source(3, max).unwrap();
    let target = enc.target(3, model.config().max_tgt_len).unwrap();
    let ps = model.params();
    // key biases shift each attention row uniformly, so their gradient is exactly zero
    let ids: Vec<ParamId> = ps.ids().filter(|&id| !ps.name(id).ends_with("key.bias")).collect();
    for (name, weighting) in [("composite live", Weighting::Live), ("composite normalized", Weighting::Normalized)] {
        let cfg = FinetuneConfig { weighting, floor_weights: false, ..FinetuneConfig::default() };
        let r = check_params(ps, &ids, h, 4, |g: &mut Graph| {
            Ok(composite_loss_in(&model, g, &query, &inputs, &rows, &target, &cfg, &[0, 1])?.combined)
        });
        worst.push((name, r.unwrap().max_error()));
    }

    let secs = start.elapsed().as_secs_f64();
    let (op, err) = worst.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    verdict(
        err < GRAD_TOL && secs < GRAD_BUDGET_SECS,
        format!("{} checks, worst {op} rel err {err:.2e} (< {GRAD_TOL:.0e}), {secs:.1}s (< {GRAD_BUDGET_SECS}s)", worst.len()),
    )
}

fn contrastive_losses(first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> (f64, f64) {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&first).unwrap());
    let b = g.constant(Tensor::from_rows(&second).unwrap());
    let q2q = loss_q2q(&mut g, a, b, 0.2, NegativeViews::First).unwrap();
    let q2c = loss_q2c(&mut g, a, b, 0.2).unwrap();
    (g.value(q2q).item(), g.value(q2c).item())
}

fn contrastive_oracle() -> Verdict {
    let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let want = (1.0 + 2.0 * (-5.0f64).exp()).ln();
    let (q2q, q2c) = contrastive_losses(rows.clone(), rows);
    let mut err = (q2q - want).abs().max((q2c - want).abs());
    for b in [2usize, 3, 4, 7] {
        let rows = vec![vec![0.6, 0.8]; b];
        let (q2q, q2c) = contrastive_losses(rows.clone(), rows);
        err = err.max((q2q - (b as f64).ln()).abs()).max((q2c - (b as f64).ln()).abs());
    }
    verdict(
        err < CLOSED_FORM_TOL,
        format!("orthogonal negatives {q2q:.6} vs {want:.6}; max err {err:.1e} incl. ln(B) batches (< {CLOSED_FORM_TOL:.0e})"),
    )
}

fn composite_arithmetic() -> Verdict {
    let (_, enc) = toy_pairs(24, 5);
    let vocab_size = enc.iter().flat_map(|p| p.code.iter().chain(&p.comment)).max().unwrap() + 1;
    let base = small_model(vocab_size, 0.1, 3);
    let mut worst = 0.0f64;
    let mut n = 0;
    for weighting in [Weighting::Live, Weighting::Normalized, Weighting::Retrieval, Weighting::Uniform] {
        let cfg = FinetuneConfig { epochs: 2, batch_size: 6, k: 3, learning_rate: 3e-3, weighting, ..FinetuneConfig::default() };
        let mut model = base.clone();
        let log = finetune(&mut model, &enc, &cfg, IndexSource::Live, 21, &mut |_, _| Ok(())).unwrap();
        for r in &log.records {
            let by_hand: f64 = r.losses.iter().zip(&r.weights).map(|(l, w)| l * w).sum::<f64>() / r.k as f64;
            worst = worst.max((by_hand - r.combined).abs());
            n += 1;
        }
    }

    // k = 1 with unit weight against a separately built cross-entropy
    let model = small_model(vocab_size, 0.1, 4);
    let index = EmbeddingIndex::build(&model, &enc, "k1").unwrap();
    let max = model.config().max_src_len;
    let mut k1 = 0.0f64;
    for q in 0..4 {
        let hit = index.top_k_for_row(q, 1).unwrap().remove(0);
        let input = build_augmented_input(&enc.get(q).code, &hit, &enc, max).unwrap();
        let target = enc.target(q, model.config().max_tgt_len).unwrap();
        let cfg = FinetuneConfig { weighting: Weighting::Uniform, ..FinetuneConfig::default() };
        let mut g = Graph::with_params(model.params());
        let vars = composite_loss_in(&model, &mut g, &enc.source(q, max).unwrap(), &[input.clone()], &[index.row(hit.row)], &target, &cfg, &[q as u64])
            .unwrap();
        let mut h = Graph::with_params(model.params());
        let (logits, gold) = model.teacher_forced_in(&mut h, input.tokens.ids(), target.ids(), Mode::Train { seed: q as u64 }).unwrap();
        let ce = h.cross_entropy(logits, &gold, PAD, Reduction::Sum).unwrap();
        k1 = k1.max((g.value(vars.combined).item() - h.value(ce).item()).abs());
    }
    verdict(
        n > 0 && worst <= RECORD_TOL && k1 <= RECORD_TOL,
        format!("{n} logged steps, max |record - (1/k)Σ L·w| {worst:.1e}; k=1 vs CE {k1:.1e} (<= {RECORD_TOL:.0e})"),
    )
}

fn brute_top_k(ids: &[String], rows: &[Vec<f64>], query: &[f64], k: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let q = unit(query);
    let mut all: Vec<(String, f64)> = ids
        .iter()
        .zip(rows)
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, r)| (id.clone(), unit(r).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)))
        .collect();
    // insertion sort: score descending, id ascending
    for i in 1..all.len() {
        let mut j = i;
        while j > 0 && (all[j].1 > all[j - 1].1 || (all[j].1 == all[j - 1].1 && all[j].0 < all[j - 1].0)) {
            all.swap(j, j - 1);
            j -= 1;
        }
    }
    all.truncate(k);
    all
}

fn retrieval_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    let mut ties = 0;
    for _ in 0..TOPK_INSTANCES {
        let n = rng.gen_range(2..=200);
        let d = rng.gen_range(1..=64);
        // small integers so duplicated rows give exact ties
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        while rows.len() < n {
            if !rows.is_empty() && rng.gen_bool(0.3) {
                let r = rows[rng.gen_range(0..rows.len())].clone();
                rows.push(r);
                continue;
            }
            let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-2..=2) as f64).collect();
            if r.iter().any(|&x| x != 0.0) {
                rows.push(r);
            }
        }
        let mut ids: Vec<String> = (0..n).map(|i| format!("p{:05}", (i * 7919) % 100_000)).collect();
        ids.shuffle(&mut rng);
        let index = EmbeddingIndex::from_embeddings(ids.clone(), &rows, "oracle").unwrap();
        let query: Vec<f64> = if rng.gen_bool(0.5) { rows[rng.gen_range(0..n)].clone() } else { (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let exclude = rng.gen_bool(0.5).then(|| ids[rng.gen_range(0..n)].clone());
        let eligible = n - usize::from(exclude.is_some());
        let k = rng.gen_range(1..=eligible);
        let got = index.top_k(&query, k, exclude.as_deref()).unwrap();
        let want = brute_top_k(&ids, &rows, &query, k, exclude.as_deref());
        ties += want.windows(2).filter(|w| w[0].1 == w[1].1).count();
        let same = got.len() == want.len()
            && got.iter().zip(&want).enumerate().all(|(i, (g, w))| g.pair_id == w.0 && g.score == w.1 && g.rank == i + 1);
        if !same {
            mismatches += 1;
        }
    }

    // self-exclusion over one full training epoch on the toy corpus
    let cfg = PipelineConfig::from_toml(TOY).unwrap();
    let pairs = synth::generate(&cfg.data.synth).unwrap();
    let vocab = Vocabulary::build(pairs.iter(), 1);
    let enc = EncodedPairs::new(pairs.iter(), &vocab).unwrap();
    let mut model = Transformer::init(cfg.model.build(vocab.len()).unwrap(), 8).unwrap();
    let ft = FinetuneConfig { epochs: 1, ..cfg.finetune.clone() };
    let log = finetune(&mut model, &enc, &ft, IndexSource::Live, 8, &mut |_, _| Ok(())).unwrap();
    let mut seen: Vec<&str> = log.records.iter().map(|r| r.query_id.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    let violations = log
        .records
        .iter()
        .filter(|r| r.exemplar_ids.contains(&r.query_id) || r.exemplar_ids.len() != ft.k)
        .count();
    let audited = log.records.len() == enc.len() && seen.len() == enc.len();
    verdict(
        mismatches == 0 && violations == 0 && audited,
        format!(
            "{TOPK_INSTANCES} instances, {mismatches} mismatches ({ties} adjacent ties); epoch audit {} steps, {violations} self-retrievals",
            log.records.len()
        ),
    )
}

fn words(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    const VOCAB: &[&str] = &["the", "a", "item", "items", "count", "run", "running", "returns", "return", "of"];
    (0..rng.gen_range(1..=max_len)).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string()).collect()
}

fn metric_oracles() -> Verdict {
    let t = eval_tokens;
    let s = t("returns the number of items");
    let mut fixtures = Vec::new();
    fixtures.push(("identity bleu", (sentence_bleu(&s, &s, 4, Smoothing::HalfOverLength) - 1.0).abs() < 1e-12));
    fixtures.push(("identity rouge", rouge_l(&s, &s, 1.2) == 1.0));
    let three = [t("a b c d e"), t("f g h i j"), t("k l m n o")];
    fixtures.push(("identity cider", (cider(&three, &three, 4).unwrap().corpus - 10.0).abs() < 1e-12));
    fixtures.push(("rouge a b c / a c", (rouge_l(&t("a b c"), &t("a c"), 1.2) - 0.8299).abs() < ROUGE_FIXTURE_TOL));
    fixtures.push(("clipped unigram 1/3", (metrics::bleu::modified_precision(&t("the the the"), &t("the cat"), 1) - 1.0 / 3.0).abs() < 1e-15));
    let failed: Vec<&str> = fixtures.iter().filter(|f| !f.1).map(|f| f.0).collect();

    let stemmer = rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English);
    let stem = |w: &str| stemmer.stem(w).into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let mut worst = 0.0f64;
    let mut lcs_bad = 0;
    for _ in 0..RANDOM_METRIC_PAIRS {
        let h = words(&mut rng, 7);
        let r = words(&mut rng, 7);
        worst = worst.max((sentence_bleu(&h, &r, 4, Smoothing::HalfOverLength) - oracles::sentence_bleu(&h, &r)).abs());
        worst = worst.max((rouge_l(&h, &r, 1.2) - oracles::rouge_l(&h, &r)).abs());
        worst = worst.max((meteor(&h, &r, MeteorParams::default()) - oracles::meteor(&h, &r, stem)).abs());
        lcs_bad += usize::from(metrics::rouge::lcs_len(&h, &r) != oracles::lcs(&h, &r));
    }
    for _ in 0..RANDOM_METRIC_PAIRS / 3 {
        let n = rng.gen_range(2..6);
        let hyps: Vec<Vec<String>> = (0..n).map(|_| words(&mut rng, 6)).collect();
        let refs: Vec<Vec<String>> = (0..n).map(|_| words(&mut rng, 6)).collect();
        for (g, w) in cider(&hyps, &refs, 4).unwrap().per_example.iter().zip(oracles::cider(&hyps, &refs)) {
            worst = worst.max((g - w).abs());
        }
        worst = worst.max((corpus_bleu(&hyps, &refs, 4).unwrap() - oracles::corpus_bleu(&hyps, &refs)).abs());
    }
    verdict(
        failed.is_empty() && lcs_bad == 0 && worst < METRIC_TOL,
        format!(
            "{} fixtures ok{}; {RANDOM_METRIC_PAIRS} random pairs + {} corpora, worst diff {worst:.1e} (< {METRIC_TOL:.0e})",
            fixtures.len() - failed.len(),
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") },
            RANDOM_METRIC_PAIRS / 3
        ),
    )
}

fn toy_run(dir: &Path) -> jointsum::pipeline::PipelineOutcome {
    let mut cfg = PipelineConfig::from_toml(TOY).unwrap();
    cfg.output_dir = dir.to_path_buf();
    run_pipeline(&cfg).unwrap()
}

fn overfit(out: &jointsum::pipeline::PipelineOutcome, secs: f64) -> Verdict {
    let train = out.report.evaluation("final.train").unwrap();
    verdict(
        train.count == 50 && train.corpus_bleu >= OVERFIT_BLEU && train.exact_match >= OVERFIT_EXACT,
        format!(
            "{} training pairs: C-BLEU {:.4} (>= {OVERFIT_BLEU}), exact {:.2} (>= {OVERFIT_EXACT}), {secs:.0}s",
            train.count, train.corpus_bleu, train.exact_match
        ),
    )
}

fn ablation_direction() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::from_toml(TOY).unwrap();
    cfg.data.synth.n_pairs = 500;
    cfg.finetune.epochs = 15;
    cfg.output_dir = dir.path().to_path_buf();
    let rows = ablate(&cfg, &[Arm::Full, Arm::OnlyGenerator, Arm::WithoutCombined]).unwrap();
    let get = |a: Arm| rows.iter().find(|r| r.arm == a.name()).unwrap().rouge_l;
    let (full, only, without) = (get(Arm::Full), get(Arm::OnlyGenerator), get(Arm::WithoutCombined));
    verdict(
        full >= only && without <= full,
        format!("held-out ROUGE-L: full {full:.4}, only-generator {only:.4}, without-combined {without:.4}"),
    )
}

fn refinement(out: &jointsum::pipeline::PipelineOutcome) -> Verdict {
    let sel = out.report.selection.as_ref().unwrap();
    let before = out.report.evaluation("finetune.train").unwrap().rouge_l;
    let after = out.report.evaluation("final.train").unwrap().rouge_l;
    verdict(
        sel.mean_selected >= sel.mean_greedy && after > before,
        format!(
            "selected {:.4} >= greedy {:.4}; train ROUGE-L {before:.4} -> {after:.4}",
            sel.mean_selected, sel.mean_greedy
        ),
    )
}

fn determinism(a: &Path, b: &Path) -> Verdict {
    let files = ["init.ckpt", "pretrain.ckpt", "finetune.ckpt", "refine.ckpt", "final.ckpt", "report.json", "predictions.jsonl", "test_scores.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    verdict(differing.is_empty(), format!("{} artifacts compared byte for byte, differing: {differing:?}", files.len()))
}

fn sweep() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::from_toml(TOY).unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let rows = k_sweep(&cfg, &parse_range("1..5").unwrap()).unwrap();
    let ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    let finite = rows
        .iter()
        .all(|r| [r.corpus_bleu, r.sentence_bleu, r.rouge_l, r.meteor, r.cider, r.exact_match].iter().all(|x| x.is_finite()));
    let csv = std::fs::read_to_string(dir.path().join("k_sweep.csv")).unwrap_or_default();
    let curve: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.rouge_l)).collect();
    verdict(
        ks == [1, 2, 3, 4, 5] && finite && csv.lines().count() == 6,
        format!("k = {ks:?}, test ROUGE-L curve [{}], {} csv lines", curve.join(", "), csv.lines().count()),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    let mut report = |id: u8, name: &'static str, v: Verdict| {
        println!("[{}] {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    report(1, "gradient correctness", gradients());
    report(2, "contrastive closed form", contrastive_oracle());
    report(3, "composite loss arithmetic", composite_arithmetic());
    report(4, "retrieval exactness", retrieval_exactness());
    report(5, "metric oracles", metric_oracles());

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let first = toy_run(a.path());
    let secs = start.elapsed().as_secs_f64();
    toy_run(b.path());
    report(6, "overfit sanity", overfit(&first, secs));
    report(7, "ablation direction", ablation_direction());
    report(8, "self-refinement dominance", refinement(&first));
    report(9, "determinism", determinism(a.path(), b.path()));
    report(10, "k-sweep harness", sweep());

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

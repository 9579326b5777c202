//! CIDEr: TF-IDF weighted n-gram cosine, averaged over orders 1..=max_n, times 10.
//!
//! Document frequencies come from the references (one per example) and
//! `idf = ln(N / max(1, df))`. With a single example every reference n-gram has
//! idf 0 and the score collapses to 0; [`CiderScore::degenerate`] flags this.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::bleu::ngram_counts;
use crate::error::{contract_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CiderScore {
    pub corpus: f64,
    pub per_example: Vec<f64>,
    /// True when idf cannot separate n-grams (fewer than two examples).
    pub degenerate: bool,
}

fn tfidf<'a>(
    tokens: &'a [String],
    n: usize,
    df: &HashMap<&[String], usize>,
    n_docs: f64,
) -> BTreeMap<&'a [String], f64> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 / total as f64 * (n_docs / d).ln())
        })
        .collect()
}

// ordered maps keep the floating-point sums identical from run to run
fn cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (na * nb)
}

pub fn cider(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<CiderScore> {
    if hyps.len() != refs.len() {
        return contract_err(format!("{} hypotheses for {} references", hyps.len(), refs.len()));
    }
    if hyps.is_empty() || max_n == 0 {
        return Ok(CiderScore { corpus: 0.0, per_example: vec![], degenerate: true });
    }
    let n_docs = refs.len() as f64;
    let mut per_example = vec![0.0; hyps.len()];
    for n in 1..=max_n {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for g in ngram_counts(r, n).into_keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
            let vh = tfidf(h, n, &df, n_docs);
            let vr = tfidf(r, n, &df, n_docs);
            per_example[i] += cosine(&vh, &vr);
        }
    }
    for s in &mut per_example {
        *s *= 10.0 / max_n as f64;
    }
    let corpus = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(CiderScore { corpus, per_example, degenerate: refs.len() < 2 })
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};

/// Treatment of zero n-gram precisions in sentence BLEU.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// A zero precision makes the score zero.
    None,
    /// Replace a zero precision with `1 / (2 · |hyp|)`.
    #[default]
    HalfOverLength,
}

pub(crate) fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// `(clipped matches, hypothesis n-grams)` for order `n`.
pub fn clipped_counts(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Modified n-gram precision; 0 when the hypothesis has no n-grams of that order.
pub fn modified_precision(hyp: &[String], reference: &[String], n: usize) -> f64 {
    match clipped_counts(hyp, reference, n) {
        (_, 0) => 0.0,
        (m, t) => m as f64 / t as f64,
    }
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

pub fn sentence_bleu(hyp: &[String], reference: &[String], max_n: usize, smoothing: Smoothing) -> f64 {
    if hyp.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let mut p = modified_precision(hyp, reference, n);
        if p == 0.0 {
            match smoothing {
                Smoothing::None => return 0.0,
                Smoothing::HalfOverLength => p = 1.0 / (2.0 * hyp.len() as f64),
            }
        }
        log_sum += p.ln();
    }
    brevity_penalty(hyp.len(), reference.len()) * (log_sum / max_n as f64).exp()
}

/// Counts pooled over the corpus before the geometric mean; no smoothing.
pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<f64> {
    if hyps.len() != refs.len() {
        return contract_err(format!("{} hypotheses for {} references", hyps.len(), refs.len()));
    }
    if hyps.is_empty() || max_n == 0 {
        return Ok(0.0);
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=max_n {
            let (m, t) = clipped_counts(h, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if matched.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_sum: f64 = matched.iter().zip(&total).map(|(&m, &t)| (m as f64 / t as f64).ln()).sum();
    let hyp_len = hyps.iter().map(Vec::len).sum();
    let ref_len = refs.iter().map(Vec::len).sum();
    Ok(brevity_penalty(hyp_len, ref_len) * (log_sum / max_n as f64).exp())
}

//! Autoregressive decoding.

use std::cmp::Ordering;

use super::transformer::{EncoderOutput, Mode, Transformer};
use crate::error::{contract_err, Result};
use crate::rng;
use crate::vocab::{TokenSequence, BOS, EOS, PAD, SEP};

/// How the next token is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    Greedy,
    /// Keeps `width` hypotheses ranked by summed log-probability.
    Beam { width: usize },
    /// Samples from `softmax(logits / temperature)`.
    Sample { temperature: f64, seed: u64 },
}

/// Tokens the decoder may never emit.
fn banned(id: usize) -> bool {
    matches!(id, PAD | BOS | SEP)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !banned(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .enumerate()
            .filter(|(i, _)| !banned(*i))
            .map(|(_, &v)| (v - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if banned(i) { f64::NEG_INFINITY } else { v - lse })
        .collect()
}

/// Highest allowed logit; ties go to the lowest id.
fn argmax(logits: &[f64]) -> usize {
    let mut best = None::<(usize, f64)>;
    for (i, &v) in logits.iter().enumerate() {
        if banned(i) {
            continue;
        }
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).unwrap_or(EOS)
}

impl Transformer {
    /// Decode a comment for `source`. The result starts with `<bos>`, ends with
    /// `<eos>` and is at most `max_len` long.
    pub fn generate(&self, source: &TokenSequence, strategy: Strategy, max_len: usize) -> Result<TokenSequence> {
        let max_len = max_len.min(self.config().max_tgt_len);
        if max_len < 2 {
            return contract_err("max_len must leave room for <bos> and <eos>");
        }
        let encoded = self.encode(source, Mode::Eval)?;
        match strategy {
            Strategy::Greedy => self.greedy(&encoded, max_len),
            Strategy::Beam { width } => self.beam(&encoded, max_len, width),
            Strategy::Sample { temperature, seed } => self.sample(&encoded, max_len, temperature, seed),
        }
    }

    fn greedy(&self, encoded: &EncoderOutput, max_len: usize) -> Result<TokenSequence> {
        let mut ids = vec![BOS];
        while ids.len() < max_len - 1 {
            let next = argmax(&self.next_logits(encoded, &ids)?);
            ids.push(next);
            if next == EOS {
                return Ok(TokenSequence::from_ids(ids));
            }
        }
        ids.push(EOS);
        Ok(TokenSequence::from_ids(ids))
    }

    fn sample(&self, encoded: &EncoderOutput, max_len: usize, temperature: f64, seed: u64) -> Result<TokenSequence> {
        if !(temperature > 0.0) {
            return contract_err("sampling temperature must be positive");
        }
        let mut r = rng::rng(seed);
        let mut ids = vec![BOS];
        while ids.len() < max_len - 1 {
            let scaled: Vec<f64> = self.next_logits(encoded, &ids)?.iter().map(|v| v / temperature).collect();
            let probs: Vec<f64> = log_softmax(&scaled).iter().map(|l| l.exp()).collect();
            let next = Transformer::sample_index(&probs, &mut r);
            ids.push(next);
            if next == EOS {
                return Ok(TokenSequence::from_ids(ids));
            }
        }
        ids.push(EOS);
        Ok(TokenSequence::from_ids(ids))
    }

    fn beam(&self, encoded: &EncoderOutput, max_len: usize, width: usize) -> Result<TokenSequence> {
        if width == 0 {
            return contract_err("beam width must be positive");
        }
        // (tokens, summed log-probability)
        let mut alive: Vec<(Vec<usize>, f64)> = vec![(vec![BOS], 0.0)];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        let rank = |a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)| {
            b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
        };
        while !alive.is_empty() {
            let mut candidates = Vec::new();
            for (ids, score) in &alive {
                if ids.len() == max_len - 1 {
                    let mut done = ids.clone();
                    done.push(EOS);
                    finished.push((done, *score));
                    continue;
                }
                let logp = log_softmax(&self.next_logits(encoded, ids)?);
                let mut order: Vec<usize> = (0..logp.len()).filter(|&i| !banned(i)).collect();
                order.sort_by(|&a, &b| logp[b].partial_cmp(&logp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
                for &tok in order.iter().take(width) {
                    let mut next = ids.clone();
                    next.push(tok);
                    candidates.push((next, score + logp[tok]));
                }
            }
            candidates.sort_by(rank);
            candidates.truncate(width);
            alive.clear();
            for c in candidates {
                if *c.0.last().unwrap() == EOS {
                    finished.push(c);
                } else {
                    alive.push(c);
                }
            }
            finished.sort_by(rank);
            finished.truncate(width);
            // Scores only fall as hypotheses grow, so a finished hypothesis that
            // beats every live one cannot be overtaken.
            let best_alive = alive.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            if finished.len() >= width || finished.first().is_some_and(|f| f.1 >= best_alive) {
                break;
            }
        }
        finished.sort_by(rank);
        Ok(TokenSequence::from_ids(finished.swap_remove(0).0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_softmax_excludes_banned() {
        let l = log_softmax(&[5.0, 5.0, 0.0, 5.0, 0.0]);
        assert_eq!(l[PAD], f64::NEG_INFINITY);
        assert_eq!(l[BOS], f64::NEG_INFINITY);
        assert_eq!(l[SEP], f64::NEG_INFINITY);
        assert!((l[EOS] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        assert_eq!(argmax(&[9.0, 9.0, 1.0, 9.0, 3.0, 3.0]), 4);
    }
}

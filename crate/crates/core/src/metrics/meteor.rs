//! METEOR with exact and stem matching stages (no synonym stage).
//!
//! The alignment maximises exact matches, then stem matches among the tokens
//! left over, then picks the arrangement with the fewest chunks. The chunk
//! search is exhaustive with a node budget; past the budget the best
//! alignment found so far is used.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeteorParams {
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams { alpha: 0.9, gamma: 0.5, theta: 3.0 }
    }
}

/// Chosen token alignment between hypothesis and reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    /// `(hyp position, ref position)`, sorted by hypothesis position.
    pub pairs: Vec<(usize, usize)>,
    pub exact: usize,
    pub stem: usize,
    pub chunks: usize,
}

const SEARCH_BUDGET: usize = 200_000;

pub fn stems(tokens: &[String]) -> Vec<String> {
    let stemmer = Stemmer::create(Algorithm::English);
    tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect()
}

struct Search<'a> {
    hyp: &'a [String],
    reference: &'a [String],
    hyp_stems: Vec<String>,
    ref_stems: Vec<String>,
    exact_quota: HashMap<&'a str, usize>,
    stem_quota: HashMap<String, usize>,
    exact_used: HashMap<&'a str, usize>,
    stem_used: HashMap<String, usize>,
    ref_used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Option<(usize, Vec<(usize, usize)>)>,
    nodes: usize,
}

fn counts<'a>(xs: &'a [String]) -> HashMap<&'a str, usize> {
    let mut c = HashMap::new();
    for x in xs {
        *c.entry(x.as_str()).or_insert(0) += 1;
    }
    c
}

impl<'a> Search<'a> {
    fn new(hyp: &'a [String], reference: &'a [String]) -> Self {
        let hyp_stems = stems(hyp);
        let ref_stems = stems(reference);
        let (hc, rc) = (counts(hyp), counts(reference));
        let exact_quota: HashMap<&str, usize> =
            hc.iter().filter_map(|(w, &a)| rc.get(w).map(|&b| (*w, a.min(b)))).collect();
        // tokens left over after the exact stage, grouped by stem
        let mut left_h: HashMap<String, usize> = HashMap::new();
        let mut left_r: HashMap<String, usize> = HashMap::new();
        for (w, &a) in &hc {
            let s = &hyp_stems[hyp.iter().position(|t| t == w).unwrap()];
            *left_h.entry(s.clone()).or_insert(0) += a - exact_quota.get(w).copied().unwrap_or(0);
        }
        for (w, &b) in &rc {
            let s = &ref_stems[reference.iter().position(|t| t == w).unwrap()];
            *left_r.entry(s.clone()).or_insert(0) += b - exact_quota.get(w).copied().unwrap_or(0);
        }
        let stem_quota = left_h
            .iter()
            .filter_map(|(s, &a)| left_r.get(s).map(|&b| (s.clone(), a.min(b))))
            .filter(|(_, q)| *q > 0)
            .collect();
        Search {
            hyp,
            reference,
            hyp_stems,
            ref_stems,
            exact_quota,
            stem_quota,
            exact_used: HashMap::new(),
            stem_used: HashMap::new(),
            ref_used: vec![false; reference.len()],
            current: Vec::new(),
            best: None,
            nodes: 0,
        }
    }

    fn quotas_met(&self) -> bool {
        self.exact_quota.iter().all(|(w, &q)| self.exact_used.get(w).copied().unwrap_or(0) == q)
            && self.stem_quota.iter().all(|(s, &q)| self.stem_used.get(s).copied().unwrap_or(0) == q)
    }

    fn options(&self, i: usize, prev: Option<usize>) -> Vec<(usize, bool)> {
        let w = self.hyp[i].as_str();
        let exact_left = self.exact_used.get(w).copied().unwrap_or(0) < self.exact_quota.get(w).copied().unwrap_or(0);
        let s = &self.hyp_stems[i];
        let stem_left = self.stem_used.get(s).copied().unwrap_or(0) < self.stem_quota.get(s).copied().unwrap_or(0);
        let mut out: Vec<(usize, bool)> = (0..self.reference.len())
            .filter(|&j| !self.ref_used[j])
            .filter_map(|j| {
                if self.reference[j] == w {
                    exact_left.then_some((j, true))
                } else if self.ref_stems[j] == *s {
                    stem_left.then_some((j, false))
                } else {
                    None
                }
            })
            .collect();
        // try continuing the current chunk first
        if let Some(p) = prev {
            if let Some(k) = out.iter().position(|&(j, _)| j == p + 1) {
                let c = out.remove(k);
                out.insert(0, c);
            }
        }
        out
    }

    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET && self.best.is_some() {
            return;
        }
        if self.best.as_ref().is_some_and(|(b, _)| chunks >= *b) {
            return;
        }
        if i == self.hyp.len() {
            if self.quotas_met() {
                self.best = Some((chunks, self.current.clone()));
            }
            return;
        }
        for (j, exact) in self.options(i, prev) {
            let key_w = self.hyp[i].as_str();
            let key_s = self.hyp_stems[i].clone();
            if exact {
                *self.exact_used.entry(key_w).or_insert(0) += 1;
            } else {
                *self.stem_used.entry(key_s.clone()).or_insert(0) += 1;
            }
            self.ref_used[j] = true;
            self.current.push((i, j));
            let new_chunk = usize::from(prev.map_or(true, |p| p + 1 != j));
            self.run(i + 1, Some(j), chunks + new_chunk);
            self.current.pop();
            self.ref_used[j] = false;
            if exact {
                *self.exact_used.get_mut(key_w).unwrap() -= 1;
            } else {
                *self.stem_used.get_mut(&key_s).unwrap() -= 1;
            }
        }
        self.run(i + 1, None, chunks);
    }
}

/// Maximum staged matching with the fewest chunks.
pub fn align(hyp: &[String], reference: &[String]) -> Alignment {
    let mut s = Search::new(hyp, reference);
    s.run(0, None, 0);
    let (chunks, pairs) = s.best.unwrap_or((0, Vec::new()));
    let exact = pairs.iter().filter(|&&(i, j)| hyp[i] == reference[j]).count();
    Alignment { exact, stem: pairs.len() - exact, pairs, chunks }
}

/// Score from alignment statistics.
pub fn meteor_from_counts(matches: usize, chunks: usize, hyp_len: usize, ref_len: usize, p: MeteorParams) -> f64 {
    if matches == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let precision = matches as f64 / hyp_len as f64;
    let recall = matches as f64 / ref_len as f64;
    let fmean = precision * recall / (p.alpha * precision + (1.0 - p.alpha) * recall);
    let penalty = p.gamma * (chunks as f64 / matches as f64).powf(p.theta);
    fmean * (1.0 - penalty)
}

pub fn meteor(hyp: &[String], reference: &[String], params: MeteorParams) -> f64 {
    let a = align(hyp, reference);
    meteor_from_counts(a.pairs.len(), a.chunks, hyp.len(), reference.len(), params)
}

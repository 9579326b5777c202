use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{bleu, cider, eval_tokens, meteor, rouge};
use crate::error::{contract_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub max_n: usize,
    pub smoothing: bleu::Smoothing,
    pub rouge_beta: f64,
    pub meteor: meteor::MeteorParams,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            max_n: 4,
            smoothing: bleu::Smoothing::HalfOverLength,
            rouge_beta: 1.2,
            meteor: meteor::MeteorParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleScores {
    pub id: String,
    pub sentence_bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

/// Corpus-level and per-example scores for one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub count: usize,
    pub corpus_bleu: f64,
    pub sentence_bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub cider_degenerate: bool,
    /// Exact-match rate on evaluation tokens.
    pub exact_match: f64,
    pub config: MetricConfig,
    pub per_example: Vec<ExampleScores>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Score `hyps` against `refs` (raw text, paired by position).
pub fn evaluate(ids: &[String], hyps: &[String], refs: &[String], config: &MetricConfig) -> Result<MetricReport> {
    if hyps.len() != refs.len() || ids.len() != refs.len() {
        return contract_err(format!("{} ids, {} hypotheses, {} references", ids.len(), hyps.len(), refs.len()));
    }
    let h: Vec<Vec<String>> = hyps.iter().map(|s| eval_tokens(s)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| eval_tokens(s)).collect();
    let cid = cider::cider(&h, &r, config.max_n)?;
    let per_example: Vec<ExampleScores> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| ExampleScores {
            id: id.clone(),
            sentence_bleu: bleu::sentence_bleu(&h[i], &r[i], config.max_n, config.smoothing),
            rouge_l: rouge::rouge_l(&h[i], &r[i], config.rouge_beta),
            meteor: meteor::meteor(&h[i], &r[i], config.meteor),
            cider: cid.per_example.get(i).copied().unwrap_or(0.0),
        })
        .collect();
    Ok(MetricReport {
        count: ids.len(),
        corpus_bleu: bleu::corpus_bleu(&h, &r, config.max_n)?,
        sentence_bleu: mean(per_example.iter().map(|e| e.sentence_bleu)),
        rouge_l: mean(per_example.iter().map(|e| e.rouge_l)),
        meteor: mean(per_example.iter().map(|e| e.meteor)),
        cider: cid.corpus,
        cider_degenerate: cid.degenerate,
        exact_match: mean(h.iter().zip(&r).map(|(a, b)| f64::from(u8::from(a == b)))),
        config: config.clone(),
        per_example,
    })
}

impl MetricReport {
    /// Per-example scores as CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.per_example {
            out.serialize(e).map_err(|e| crate::Error::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// One line per corpus-level metric.
    pub fn summary(&self) -> String {
        format!(
            "n={} C-BLEU={:.4} S-BLEU={:.4} ROUGE-L={:.4} METEOR={:.4} CIDEr={:.4}{} exact={:.3}",
            self.count,
            self.corpus_bleu,
            self.sentence_bleu,
            self.rouge_l,
            self.meteor,
            self.cider,
            if self.cider_degenerate { " (degenerate idf)" } else { "" },
            self.exact_match,
        )
    }
}

//! Side-by-side runs of the ablation arms and the exemplar-count sweep.

use std::fs::File;

use serde::Serialize;

use super::config::{Arm, PipelineConfig};
use super::run_pipeline;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Test-split scores of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub arm: String,
    pub k: usize,
    pub corpus_bleu: f64,
    pub sentence_bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub exact_match: f64,
    pub config_hash: String,
}

impl AblationRow {
    fn new(arm: Arm, k: usize, r: &MetricReport, config_hash: String) -> Self {
        AblationRow {
            arm: arm.name().to_string(),
            k,
            corpus_bleu: r.corpus_bleu,
            sentence_bleu: r.sentence_bleu,
            rouge_l: r.rouge_l,
            meteor: r.meteor,
            cider: r.cider,
            exact_match: r.exact_match,
            config_hash,
        }
    }
}

fn run_row(cfg: &PipelineConfig, arm: Arm, subdir: &str) -> Result<AblationRow> {
    let mut c = cfg.for_arm(arm);
    c.output_dir = cfg.output_dir.join(subdir);
    let out = run_pipeline(&c)?;
    let test = out.report.test().ok_or_else(|| Error::Data("run produced no test report".into()))?;
    Ok(AblationRow::new(arm, c.finetune.k, test, out.report.config_hash.clone()))
}

fn write_table(cfg: &PipelineConfig, stem: &str, rows: &[AblationRow]) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv::Writer::from_writer(File::create(cfg.output_dir.join(format!("{stem}.csv")))?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    std::fs::write(cfg.output_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(rows)?)?;
    Ok(())
}

/// One full run per arm, sharing the root seed. Writes `ablation.csv`.
pub fn ablate(cfg: &PipelineConfig, arms: &[Arm]) -> Result<Vec<AblationRow>> {
    let rows = arms.iter().map(|&arm| run_row(cfg, arm, arm.name())).collect::<Result<Vec<_>>>()?;
    write_table(cfg, "ablation", &rows)?;
    Ok(rows)
}

/// Full runs for each exemplar count in `ks`. Writes `k_sweep.csv`.
pub fn k_sweep(cfg: &PipelineConfig, ks: &[usize]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut c = cfg.clone();
        c.finetune.k = k;
        c.refine.params.train.k = k;
        rows.push(run_row(&c, cfg.arm, &format!("k{k}"))?);
    }
    write_table(cfg, "k_sweep", &rows)?;
    Ok(rows)
}

/// Parse an inclusive range such as `1..5`, or a single value.
pub fn parse_range(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("expected a range like 1..5, got {text:?}"));
    let (lo, hi) = match text.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim_start_matches('=').trim().parse().map_err(|_| bad())?),
        None => {
            let v: usize = text.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if lo == 0 || hi < lo {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!(parse_range("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_range("4").unwrap(), vec![4]);
        assert!(parse_range("0..2").is_err());
        assert!(parse_range("5..1").is_err());
        assert!(parse_range("a..b").is_err());
    }
}

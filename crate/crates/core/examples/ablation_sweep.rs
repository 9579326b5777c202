//! Ablation arms side by side, or the exemplar-count sweep.
//!
//! cargo run --release --example ablation_sweep -- [config.toml] [arms|k-sweep]

use jointsum::pipeline::{ablate, k_sweep, parse_range, Arm, PipelineConfig};

fn main() -> jointsum::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.first() {
        Some(path) => PipelineConfig::load(path.as_ref())?,
        None => PipelineConfig::from_toml(include_str!("toy.toml"))?,
    };
    cfg.output_dir = std::env::temp_dir().join(format!("jointsum-ablation-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&cfg.output_dir);
    let rows = match args.get(1).map(String::as_str) {
        Some("k-sweep") => k_sweep(&cfg, &parse_range("1..5")?)?,
        Some(list) => {
            let arms = list.split(',').map(Arm::parse).collect::<jointsum::Result<Vec<_>>>()?;
            ablate(&cfg, &arms)?
        }
        None => ablate(&cfg, &Arm::ALL)?,
    };
    println!("{:<22} {:>2} {:>7} {:>7} {:>7} {:>7} {:>7}", "arm", "k", "C-BLEU", "ROUGE-L", "METEOR", "CIDEr", "exact");
    for r in &rows {
        println!(
            "{:<22} {:>2} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.3}",
            r.arm, r.k, r.corpus_bleu, r.rouge_l, r.meteor, r.cider, r.exact_match
        );
    }
    println!("tables in {}", cfg.output_dir.display());
    Ok(())
}

//! Three-phase run on a synthetic corpus, then test-split metrics.
//!
//! cargo run --release --example full_pipeline -- [config.toml]

use jointsum::pipeline::{run_pipeline, PipelineConfig};

fn main() -> jointsum::Result<()> {
    let mut cfg = match std::env::args().nth(1) {
        Some(path) => PipelineConfig::load(path.as_ref())?,
        None => PipelineConfig::from_toml(include_str!("toy.toml"))?,
    };
    let dir = tempfile_dir();
    cfg.output_dir = dir.clone();
    let start = std::time::Instant::now();
    let out = run_pipeline(&cfg)?;
    for p in &out.report.phases {
        let last = p.epochs.last().map(|e| format!("{:.4}", e.mean_loss)).unwrap_or_default();
        println!("{:<9} {} loss {}", p.phase.to_string(), &p.fingerprint[..12], last);
    }
    if let Some(s) = &out.report.selection {
        println!("candidate pass: selected ROUGE-L {:.4}, greedy {:.4}", s.mean_selected, s.mean_greedy);
    }
    for e in &out.report.evaluations {
        println!("{:<15} {}", e.name, e.report.summary());
    }
    println!("artifacts in {} ({:.1}s)", dir.display(), start.elapsed().as_secs_f64());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("jointsum-example-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

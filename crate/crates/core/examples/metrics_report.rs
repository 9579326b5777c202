//! Score hypothesis/reference pairs with BLEU, ROUGE-L, METEOR and CIDEr.
//!
//! cargo run --release --example metrics_report

use jointsum::metrics::{evaluate, MetricConfig};

fn main() -> jointsum::Result<()> {
    let rows = [
        ("returns the number of items", "returns the number of items"),
        ("returns item count", "returns the number of items"),
        ("sets the user name", "updates the name of the user"),
        ("running the task", "runs the task"),
        ("closes the stream", "opens the connection"),
    ];
    let ids: Vec<String> = (1..=rows.len()).map(|i| format!("ex{i}")).collect();
    let hyps: Vec<String> = rows.iter().map(|r| r.0.to_string()).collect();
    let refs: Vec<String> = rows.iter().map(|r| r.1.to_string()).collect();
    let report = evaluate(&ids, &hyps, &refs, &MetricConfig::default())?;

    println!("{:<5} {:>7} {:>7} {:>7} {:>7}  hypothesis / reference", "id", "BLEU", "ROUGE-L", "METEOR", "CIDEr");
    for (e, (h, r)) in report.per_example.iter().zip(rows) {
        println!("{:<5} {:>7.4} {:>7.4} {:>7.4} {:>7.4}  {h} / {r}", e.id, e.sentence_bleu, e.rouge_l, e.meteor, e.cider);
    }
    println!("\n{}", report.summary());
    Ok(())
}

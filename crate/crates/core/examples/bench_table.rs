//! Runs the experiment matrix and prints the results and timing tables.
//!
//! cargo run --release --example bench_table -- [seeds]

use adaflow::experiment::{run_bench, BenchConfig};
use adaflow::Result;

fn main() -> Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = BenchConfig {
        seeds,
        ..BenchConfig::default()
    };
    let result = run_bench(&cfg)?;
    println!("{:<16} {:>6} {:>10} {:>8}", "method", "N", "NLL", "AUROC");
    for r in &result.summary {
        let nll = r.mean_nll.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        println!("{:<16} {:>6} {:>10} {:>8.4}", r.method, r.n_samples, nll, r.auroc);
    }
    println!();
    for (phase, secs) in &result.timing {
        println!("{phase:<18} {secs:>10.4}s");
    }
    Ok(())
}

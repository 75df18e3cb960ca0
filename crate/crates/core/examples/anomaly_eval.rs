//! Scores a labelled test set, reports AUROC and a few ROC points, and
//! thresholds at the 95th percentile of normal scores.
//!
//! cargo run --release --example anomaly_eval

use adaflow::adaptation::adapt;
use adaflow::data::ANOMALY;
use adaflow::flow::DEFAULT_ALPHA;
use adaflow::scoring::{classify, evaluate, score_dataset};
use adaflow::seed::stage_rng;
use adaflow::synth::{make_benchmark, BenchmarkSpec};
use adaflow::training::{pretrain, TrainConfig};
use adaflow::{FlowModel, Result};

fn main() -> Result<()> {
    let spec = BenchmarkSpec::default_for(16, 3);
    let bench = make_benchmark(1, &spec)?;
    let mut model = FlowModel::adaflow(16, DEFAULT_ALPHA, &mut stage_rng(1, "init"))?;
    pretrain(&mut model, &bench.pretrain, &TrainConfig { epochs: 15, ..TrainConfig::default() })?;
    let target = bench.target_id.clone();
    adapt(&mut model, &bench.target_train.head(1000), target.clone())?;

    let report = evaluate(&model, &bench.target_test, &target)?;
    println!(
        "{} normal / {} anomalous, mean normal NLL {:.3}, AUROC {:.4}",
        report.n_normal,
        report.n_anomaly,
        report.mean_nll.unwrap_or(f64::NAN),
        report.auroc.unwrap_or(f64::NAN)
    );
    let step = (report.roc_points.len() / 8).max(1);
    for (fpr, tpr) in report.roc_points.iter().step_by(step) {
        println!("  FPR {fpr:.3}  TPR {tpr:.3}");
    }

    let scored = score_dataset(&model, &bench.target_test, &target)?;
    let mut normal: Vec<f64> = scored.iter().filter(|s| s.label != Some(ANOMALY)).map(|s| s.score).collect();
    normal.sort_by(f64::total_cmp);
    let phi = normal[(normal.len() * 95) / 100];
    let (mut tp, mut fp) = (0, 0);
    for s in &scored {
        if classify(s.score, phi) == ANOMALY {
            if s.label == Some(ANOMALY) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    println!("threshold {phi:.3}: {tp} anomalies flagged, {fp} false alarms");
    Ok(())
}

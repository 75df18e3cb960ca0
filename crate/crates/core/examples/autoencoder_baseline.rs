//! The reconstruction-error baseline on the same benchmark, next to a flow
//! that has not been adapted to the target.
//!
//! cargo run --release --example autoencoder_baseline

use adaflow::baseline::{ae_train, default_sizes, AeModel};
use adaflow::scoring::evaluate;
use adaflow::seed::stage_rng;
use adaflow::synth::{make_benchmark, BenchmarkSpec};
use adaflow::training::TrainConfig;
use adaflow::Result;

fn main() -> Result<()> {
    let spec = BenchmarkSpec::default_for(16, 3);
    let bench = make_benchmark(2, &spec)?;
    println!("layer sizes {:?}", default_sizes(16));
    let mut ae = AeModel::with_default_architecture(16, &mut stage_rng(2, "init"))?;
    let report = ae_train(&mut ae, &bench.pretrain, &TrainConfig { epochs: 15, ..TrainConfig::default() })?;
    for p in report.loss_curve.iter().step_by(5) {
        println!("epoch {:3}  reconstruction error {:.4}", p.epoch, p.nll);
    }
    let r = evaluate(&ae, &bench.target_test, &bench.target_id)?;
    println!("target AUROC {:.4}", r.auroc.unwrap_or(f64::NAN));

    let json = ae.to_json()?;
    let back = AeModel::from_json(&json)?;
    assert_eq!(back, ae);
    println!("serialized to {} bytes and restored", json.len());
    Ok(())
}

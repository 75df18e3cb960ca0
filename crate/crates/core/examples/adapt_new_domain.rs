//! Pre-trains on the source domains of the synthetic benchmark, then registers
//! the unseen target domain from a handful of samples without any gradient step.
//!
//! cargo run --release --example adapt_new_domain

use std::time::Instant;

use adaflow::adaptation::adapt;
use adaflow::flow::DEFAULT_ALPHA;
use adaflow::seed::stage_rng;
use adaflow::synth::{make_benchmark, BenchmarkSpec};
use adaflow::training::{flat_params, pretrain, TrainConfig};
use adaflow::{FlowModel, Result};

fn mean_nll(model: &FlowModel, data: &adaflow::Dataset, k: &adaflow::DomainId) -> Result<f64> {
    let mut total = 0.0;
    for x in data.rows() {
        total -= model.log_likelihood(x, k)?;
    }
    Ok(total / data.len() as f64)
}

fn main() -> Result<()> {
    let spec = BenchmarkSpec::default_for(16, 3);
    let bench = make_benchmark(0, &spec)?;
    let mut model = FlowModel::adaflow(16, DEFAULT_ALPHA, &mut stage_rng(0, "init"))?;
    let cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let report = pretrain(&mut model, &bench.pretrain, &cfg)?;
    println!("pre-training took {:.2}s", report.seconds);
    for k in bench.pretrain.keys() {
        println!("  {k}: NLL {:.3}", report.final_nll(k).unwrap_or(f64::NAN));
    }

    let target = &bench.target_id;
    let held_out = bench.target_test.normal_only();
    let params = flat_params(&model);
    for n in [10, 100, 1000] {
        let mut adapted = model.clone();
        let start = Instant::now();
        adapt(&mut adapted, &bench.target_train.head(n), target.clone())?;
        let secs = start.elapsed().as_secs_f64();
        assert_eq!(flat_params(&adapted), params);
        println!(
            "adapted with N={n:4} in {:.2} ms: held-out target NLL {:.3}",
            secs * 1e3,
            mean_nll(&adapted, &held_out, target)?
        );
    }
    Ok(())
}

//! Trains one flow on two 2-D domains and moves samples between them by
//! swapping batch-norm statistics.
//!
//! cargo run --release --example translate_domains -- [seed]

use std::collections::BTreeMap;

use adaflow::flow::DEFAULT_ALPHA;
use adaflow::seed::stage_rng;
use adaflow::synth::translation_pair;
use adaflow::training::{pretrain, TrainConfig};
use adaflow::translation::{moment_distance, moments, translate, translate_batch};
use adaflow::{FlowModel, Result};

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (a, b) = translation_pair(2000);
    let mut rng = stage_rng(seed, "data");
    let data_a = a.sample(a.n_train, &mut rng);
    let data_b = b.sample(b.n_train, &mut rng);

    let mut model = FlowModel::adaflow(2, DEFAULT_ALPHA, &mut stage_rng(seed, "init"))?;
    let cfg = TrainConfig {
        epochs: 30,
        seed,
        ..TrainConfig::default()
    };
    let domains = BTreeMap::from([(a.name.clone(), data_a.clone()), (b.name.clone(), data_b.clone())]);
    let report = pretrain(&mut model, &domains, &cfg)?;
    for k in domains.keys() {
        println!("domain {k}: final NLL {:.4}", report.final_nll(k).unwrap_or(f64::NAN));
    }

    let moved = translate_batch(&model, &data_a, &a.name, &b.name)?;
    let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:7.3}")).collect::<Vec<_>>().join(" ");
    println!("moments (mean x0 x1, var x0 x1)");
    println!("  A           {}", fmt(moments(&data_a)));
    println!("  B           {}", fmt(moments(&data_b)));
    println!("  A -> B      {}", fmt(moments(&moved)));
    println!(
        "distance to B: untranslated {:.4}, translated {:.4}",
        moment_distance(&data_a, &data_b),
        moment_distance(&moved, &data_b)
    );

    let x = data_a.row(0);
    let there = translate(&model, x, &a.name, &b.name)?;
    let back = translate(&model, &there, &b.name, &a.name)?;
    println!("round trip {x:?} -> {there:?} -> {back:?}");
    Ok(())
}

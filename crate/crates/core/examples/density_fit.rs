//! Fits a flow to a 2-D Gaussian mixture, then checks that the learned density
//! integrates to one on a grid and draws a few samples from it.
//!
//! cargo run --release --example density_fit

use std::collections::BTreeMap;

use adaflow::flow::DEFAULT_ALPHA;
use adaflow::seed::stage_rng;
use adaflow::synth::translation_pair;
use adaflow::training::{pretrain, TrainConfig};
use adaflow::{FlowModel, Result};
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<()> {
    let (domain, _) = translation_pair(4000);
    let data = domain.sample(domain.n_train, &mut stage_rng(7, "data"));
    let k = domain.name.clone();

    let mut model = FlowModel::adaflow(2, DEFAULT_ALPHA, &mut stage_rng(7, "init"))?;
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let report = pretrain(&mut model, &BTreeMap::from([(k.clone(), data)]), &cfg)?;
    for p in report.loss_curve.iter().step_by(10) {
        println!("epoch {:3}  NLL {:.4}", p.epoch, p.nll);
    }
    println!("final NLL {:.4} after {} steps", report.final_nll(&k).unwrap_or(f64::NAN), report.steps);

    // midpoint rule on [-10, 10]^2
    let cells = 400;
    let h = 20.0 / cells as f64;
    let mut mass = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let x = [-10.0 + (i as f64 + 0.5) * h, -10.0 + (j as f64 + 0.5) * h];
            mass += model.log_likelihood(&x, &k)?.exp() * h * h;
        }
    }
    println!("integral of q over the grid: {mass:.5}");

    let mut rng = stage_rng(7, "sample");
    for _ in 0..5 {
        let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = model.generate(&z, &k)?;
        println!("sample {:8.4} {:8.4}  log q = {:.4}", x[0], x[1], model.log_likelihood(&x, &k)?);
    }
    Ok(())
}

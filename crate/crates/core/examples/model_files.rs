//! Builds a small flow by hand, registers two domains, and round-trips it
//! through the JSON model format.
//!
//! cargo run --example model_files

use adaflow::flow::{AdaBn, LeakyRelu, LinearLdu};
use adaflow::{DomainId, DomainStats, FlowModel, Layer, LayerStats, Result};

fn main() -> Result<()> {
    let linear = LinearLdu {
        lower: vec![0.5],
        upper: vec![-0.25],
        d: vec![2.0, 0.5],
        b: vec![0.1, 0.0],
    };
    // listed from the data side: linear, leaky ReLU, batch norm
    let model = FlowModel::from_normalize_order(
        2,
        0.2,
        vec![Layer::LinearLdu(linear), Layer::LeakyRelu(LeakyRelu::new(0.2)?), Layer::AdaBn(AdaBn::identity(2))],
    )?;
    let mut model = model;
    let bn = model.adabn_indices().next().expect("one batch-norm layer");
    for (name, mu, sigma) in [("quiet", 0.0, 1.0), ("loud", 3.0, 4.0)] {
        let stats = DomainStats {
            layers: [(bn, LayerStats::new(vec![mu; 2], vec![sigma; 2]))].into(),
        };
        model.set_domain(DomainId::from(name), stats)?;
    }

    let json = model.to_json()?;
    println!("{json}");
    let restored = FlowModel::from_json(&json)?;
    let x = [0.3, -1.2];
    for k in restored.domains().keys() {
        let (z, logdet) = restored.normalize(&x, k)?;
        println!("{k}: z = {z:?}, log|det J| = {logdet:.6}, log q = {:.6}", restored.log_likelihood(&x, k)?);
    }
    assert_eq!(restored, model);
    Ok(())
}

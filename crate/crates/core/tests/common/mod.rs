#![allow(dead_code)]

use std::collections::BTreeMap;

use adaflow::flow::{AdaBn, LeakyRelu, LinearLdu};
use adaflow::flow::layer::triangle_len;
use adaflow::{DomainId, DomainStats, FlowModel, Layer, LayerStats};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn magnitude(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = rng.random_range(lo..hi);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

pub fn random_linear(dim: usize, rng: &mut ChaCha8Rng) -> LinearLdu {
    let t = triangle_len(dim);
    LinearLdu {
        lower: (0..t).map(|_| rng.random_range(-0.5..0.5)).collect(),
        upper: (0..t).map(|_| rng.random_range(-0.5..0.5)).collect(),
        d: (0..dim).map(|_| magnitude(rng, 0.5, 2.0)).collect(),
        b: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

pub fn random_adabn(dim: usize, rng: &mut ChaCha8Rng) -> AdaBn {
    AdaBn {
        gamma: (0..dim).map(|_| magnitude(rng, 0.5, 2.0)).collect(),
        beta: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

pub fn random_stats(dim: usize, rng: &mut ChaCha8Rng) -> LayerStats {
    LayerStats::new(
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..dim).map(|_| rng.random_range(0.25..4.0)).collect(),
    )
}

/// A stack of `m` layers of random kinds with random statistics registered under `k`.
pub fn random_model(dim: usize, m: usize, alpha: f64, rng: &mut ChaCha8Rng) -> (FlowModel, DomainId) {
    let layers: Vec<Layer> = (0..m)
        .map(|_| match rng.random_range(0..3) {
            0 => Layer::LinearLdu(random_linear(dim, rng)),
            1 => Layer::LeakyRelu(LeakyRelu::new(alpha).unwrap()),
            _ => Layer::AdaBn(random_adabn(dim, rng)),
        })
        .collect();
    let mut model = FlowModel::new(dim, alpha, layers).unwrap();
    let k = DomainId::from("k");
    let stats = DomainStats {
        layers: model
            .adabn_indices()
            .collect::<Vec<_>>()
            .into_iter()
            .map(|i| (i, random_stats(dim, rng)))
            .collect::<BTreeMap<_, _>>(),
    };
    model.set_domain(k.clone(), stats).unwrap();
    (model, k)
}

pub fn normal_vec(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            scale * v
        })
        .collect()
}

/// Smallest absolute input seen by any leaky ReLU on the normalize pass.
pub fn min_kink_distance(model: &FlowModel, x: &[f64], k: &DomainId) -> f64 {
    let stats = model.domain_stats(k).unwrap();
    let mut z = x.to_vec();
    let mut closest = f64::INFINITY;
    for i in model.normalize_order() {
        let layer = &model.layers()[i];
        if let Layer::LeakyRelu(_) = layer {
            closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
        }
        z = layer.normalize(&z, stats.get(i)).unwrap().0;
    }
    closest
}

/// `log|det J|` of the normalize map from a central-difference Jacobian.
pub fn fd_log_det(model: &FlowModel, x: &[f64], k: &DomainId, h: f64) -> f64 {
    let dim = x.len();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let (zp, _) = model.normalize(&plus, k).unwrap();
        let (zm, _) = model.normalize(&minus, k).unwrap();
        for i in 0..dim {
            jac[(i, j)] = (zp[i] - zm[i]) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Midpoint-rule integral of `q` over `[-10, 10]^dim` with `cells` cells per axis (dim 1 or 2).
pub fn grid_mass(model: &FlowModel, k: &DomainId, cells: usize) -> f64 {
    let h = 20.0 / cells as f64;
    let at = |i: usize| -10.0 + (i as f64 + 0.5) * h;
    match model.dim() {
        1 => (0..cells).map(|i| model.log_likelihood(&[at(i)], k).unwrap().exp() * h).sum(),
        2 => (0..cells)
            .flat_map(|i| (0..cells).map(move |j| [at(i), at(j)]))
            .map(|x| model.log_likelihood(&x, k).unwrap().exp() * h * h)
            .sum(),
        d => panic!("grid quadrature only for 1-D and 2-D, got {d}"),
    }
}

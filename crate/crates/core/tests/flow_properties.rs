mod common;

use std::collections::BTreeMap;

use adaflow::flow::{DEFAULT_ALPHA, VARIANCE_EPS};
use adaflow::training::{pretrain, TrainConfig};
use adaflow::{Dataset, DomainId, FlowModel};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generate_inverts_normalize(seed in any::<u64>(), dim in 1usize..=16, m in 1usize..=6, alpha in 0.05f64..0.95) {
        let mut r = rng(seed);
        let (model, k) = random_model(dim, m, alpha, &mut r);
        for _ in 0..10 {
            let x = normal_vec(dim, 2.0, &mut r);
            let (z, _) = model.normalize(&x, &k).unwrap();
            let back = model.generate(&z, &k).unwrap();
            prop_assert!(relative_error(&back, &x) < 1e-8);
        }
    }

    #[test]
    fn normalize_inverts_generate(seed in any::<u64>(), dim in 1usize..=16, m in 1usize..=6) {
        let mut r = rng(seed);
        let (model, k) = random_model(dim, m, DEFAULT_ALPHA, &mut r);
        let z = normal_vec(dim, 1.0, &mut r);
        let x = model.generate(&z, &k).unwrap();
        let (back, _) = model.normalize(&x, &k).unwrap();
        prop_assert!(relative_error(&back, &z) < 1e-8);
    }

    #[test]
    fn log_det_matches_numeric_jacobian(seed in any::<u64>(), dim in 1usize..=8, m in 1usize..=5) {
        let mut r = rng(seed);
        let (model, k) = random_model(dim, m, DEFAULT_ALPHA, &mut r);
        let x = normal_vec(dim, 1.5, &mut r);
        prop_assume!(min_kink_distance(&model, &x, &k) > 1e-3);
        let (_, analytic) = model.normalize(&x, &k).unwrap();
        let numeric = fd_log_det(&model, &x, &k, 1e-6);
        prop_assert!((analytic - numeric).abs() < 1e-4, "analytic {} numeric {}", analytic, numeric);
    }

    #[test]
    fn ldu_determinant_matches_dense(seed in any::<u64>(), dim in 1usize..=16) {
        let mut r = rng(seed);
        let lin = random_linear(dim, &mut r);
        let w = DMatrix::from_row_slice(dim, dim, &lin.weight());
        let dense = w.determinant().abs();
        let ldu = lin.log_abs_det().exp();
        prop_assert!(((ldu - dense) / dense).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_is_base_plus_log_det(seed in any::<u64>(), dim in 1usize..=8, m in 1usize..=6) {
        let mut r = rng(seed);
        let (model, k) = random_model(dim, m, DEFAULT_ALPHA, &mut r);
        let x = normal_vec(dim, 1.0, &mut r);
        let (z, ld) = model.normalize(&x, &k).unwrap();
        let expected = adaflow::flow::log_standard_normal(&z) + ld;
        prop_assert_eq!(model.log_likelihood(&x, &k).unwrap(), expected);
    }

    #[test]
    fn json_round_trip_is_bit_exact(seed in any::<u64>(), dim in 1usize..=6, m in 1usize..=6) {
        let mut r = rng(seed);
        let (model, _) = random_model(dim, m, DEFAULT_ALPHA, &mut r);
        let back = FlowModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn trained_two_dimensional_model_integrates_to_one() {
    let (domain, _) = adaflow::synth::translation_pair(2000);
    let data = domain.sample(domain.n_train, &mut rng(5));
    let k = domain.name.clone();
    let mut model = FlowModel::adaflow(2, DEFAULT_ALPHA, &mut rng(6)).unwrap();
    pretrain(&mut model, &BTreeMap::from([(k.clone(), data)]), &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap();
    let mass = grid_mass(&model, &k, 400);
    assert!((mass - 1.0).abs() < 0.01, "{mass}");
}

#[test]
fn trained_one_dimensional_model_integrates_to_one() {
    let mut r = rng(3);
    let values: Vec<f64> = (0..2000)
        .map(|_| if r.random::<bool>() { -2.0 } else { 1.5 } + 0.6 * normal_vec(1, 1.0, &mut r)[0])
        .collect();
    let k = DomainId::from("k");
    let data = BTreeMap::from([(k.clone(), Dataset::new(1, values).unwrap())]);
    let mut model = FlowModel::adaflow(1, DEFAULT_ALPHA, &mut rng(4)).unwrap();
    pretrain(&mut model, &data, &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap();
    let mass = grid_mass(&model, &k, 20_000);
    assert!((mass - 1.0).abs() < 0.01, "{mass}");
}

#[test]
fn variance_epsilon_is_fixed() {
    assert_eq!(VARIANCE_EPS, 1e-5);
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! cargo test --release -p adaflow --test acceptance

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use adaflow::adaptation::adapt;
use adaflow::baseline::AeModel;
use adaflow::experiment::{run_bench, BenchConfig, METHOD_ADAFLOW, METHOD_AE, METHOD_FINETUNED, METHOD_FLOW};
use adaflow::flow::{DEFAULT_ALPHA, Layer, LayerStats};
use adaflow::scoring::{auroc_scores, evaluate};
use adaflow::seed::stage_rng;
use adaflow::synth::{make_benchmark, translation_pair, AnomalyGenerator, BenchmarkSpec};
use adaflow::training::{backward, batch_nll, flat_params, pretrain, set_flat_params, StatsMode, TrainConfig};
use adaflow::translation::{moment_distance, moments, translate, translate_batch};
use adaflow::{Dataset, DomainId, DomainStats, FlowModel};
use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn invertibility() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = r.random_range(1..=16);
        let m = r.random_range(1..=6);
        let (model, k) = random_model(dim, m, r.random_range(0.05..0.95), &mut r);
        for _ in 0..100 {
            let x = normal_vec(dim, 2.0, &mut r);
            let (z, _) = model.normalize(&x, &k).unwrap();
            worst = worst.max(relative_error(&model.generate(&z, &k).unwrap(), &x));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-8 && secs < 10.0, format!("max relative error {worst:.2e}, {secs:.2}s"))
}

fn log_det_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < 200 {
        let dim = r.random_range(1..=8);
        let (model, k) = random_model(dim, r.random_range(1..=6), DEFAULT_ALPHA, &mut r);
        let x = normal_vec(dim, 1.5, &mut r);
        if min_kink_distance(&model, &x, &k) < 1e-3 {
            continue;
        }
        let (_, analytic) = model.normalize(&x, &k).unwrap();
        worst = worst.max((analytic - fd_log_det(&model, &x, &k, 1e-6)).abs());
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-4 && secs < 60.0, format!("{cases} cases, max |error| {worst:.2e}, {secs:.2}s"))
}

fn ldu_determinant() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let dim = r.random_range(1..=16);
        let lin = random_linear(dim, &mut r);
        let dense = DMatrix::from_row_slice(dim, dim, &lin.weight()).determinant().abs();
        let product: f64 = lin.d.iter().map(|d| d.abs()).product();
        worst = worst.max(((product - dense) / dense).abs());
    }
    outcome(worst < 1e-10, format!("500 matrices, max relative error {worst:.2e}"))
}

fn density_normalization() -> Outcome {
    let mut r = rng(4);
    let k = DomainId::from("k");
    let values: Vec<f64> = (0..3000)
        .map(|_| if r.random::<bool>() { -2.0 } else { 1.5 } + 0.6 * normal_vec(1, 1.0, &mut r)[0])
        .collect();
    let mut one = FlowModel::adaflow(1, DEFAULT_ALPHA, &mut rng(5)).unwrap();
    let data = BTreeMap::from([(k.clone(), Dataset::new(1, values).unwrap())]);
    pretrain(&mut one, &data, &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap();
    let mass1 = grid_mass(&one, &k, 20_000);

    let (domain, _) = translation_pair(3000);
    let data = BTreeMap::from([(k.clone(), domain.sample(domain.n_train, &mut rng(6)))]);
    let mut two = FlowModel::adaflow(2, DEFAULT_ALPHA, &mut rng(7)).unwrap();
    pretrain(&mut two, &data, &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap();
    let mass2 = grid_mass(&two, &k, 500);
    outcome(
        (mass1 - 1.0).abs() < 0.01 && (mass2 - 1.0).abs() < 0.01,
        format!("1-D mass {mass1:.5}, 2-D mass {mass2:.5}"),
    )
}

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-6 || diff <= 1e-4 * numeric.abs().max(analytic.abs())
}

/// Smallest |input| to any leaky ReLU when the batch is pushed through with its own statistics.
fn batch_kink_distance(model: &FlowModel, batch: &Dataset) -> f64 {
    let dim = model.dim();
    let mut z = batch.values().to_vec();
    let mut closest = f64::INFINITY;
    for i in model.normalize_order() {
        let layer = &model.layers()[i];
        if let Layer::LeakyRelu(_) = layer {
            closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
        }
        let stats = layer.is_adabn().then(|| LayerStats::from_batch(&z, dim));
        z = z.chunks_exact(dim).flat_map(|row| layer.normalize(row, stats.as_ref()).unwrap().0).collect();
    }
    closest
}

/// Smallest |pre-activation| of any hidden ReLU over the batch.
fn ae_kink_distance(ae: &AeModel, batch: &Dataset) -> f64 {
    let last = ae.layers().len() - 1;
    let mut closest = f64::INFINITY;
    for x in batch.rows() {
        let mut a = x.to_vec();
        for (i, l) in ae.layers().iter().enumerate() {
            let pre: Vec<f64> = (0..l.outputs)
                .map(|o| l.b[o] + (0..l.inputs).map(|j| l.w[o * l.inputs + j] * a[j]).sum::<f64>())
                .collect();
            if i < last {
                closest = pre.iter().fold(closest, |c, v| c.min(v.abs()));
            }
            a = pre.into_iter().map(|v| if i < last { v.max(0.0) } else { v }).collect();
        }
    }
    closest
}

fn random_batch(dim: usize, n: usize, r: &mut ChaCha8Rng) -> Dataset {
    Dataset::new(dim, (0..n).flat_map(|_| normal_vec(dim, 1.5, r)).collect()).unwrap()
}

fn gradient_oracle() -> Outcome {
    let h = 1e-5;
    let mut r = rng(8);
    let (mut checked, mut bad, mut stacks) = (0usize, 0usize, 0usize);
    for mode in [StatsMode::Batch, StatsMode::Frozen] {
        let mut done = 0;
        while done < 20 {
            let dim = r.random_range(1..=8);
            let (model, k) = random_model(dim, r.random_range(1..=5), DEFAULT_ALPHA, &mut r);
            let batch = random_batch(dim, 6, &mut r);
            let kink = match mode {
                StatsMode::Batch => batch_kink_distance(&model, &batch),
                StatsMode::Frozen => batch.rows().map(|x| min_kink_distance(&model, x, &k)).fold(f64::INFINITY, f64::min),
            };
            if kink < 1e-3 {
                continue;
            }
            let (_, grad) = backward(&model, &batch, &k, mode).unwrap();
            let grad = grad.flatten();
            let params = flat_params(&model);
            let mut probe = model.clone();
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += h;
                set_flat_params(&mut probe, &p);
                let up = batch_nll(&probe, &batch, &k, mode).unwrap();
                p[i] -= 2.0 * h;
                set_flat_params(&mut probe, &p);
                let down = batch_nll(&probe, &batch, &k, mode).unwrap();
                checked += 1;
                if !close(grad[i], (up - down) / (2.0 * h)) {
                    bad += 1;
                }
            }
            done += 1;
            stacks += 1;
        }
    }
    let mut ae_cases = 0;
    while ae_cases < 20 {
        let dim = r.random_range(2..=8);
        let mid = r.random_range(1..=dim);
        let mut ae = AeModel::new(&[dim, mid, r.random_range(1..=mid), mid, dim], &mut r).unwrap();
        for l in ae.layers_mut() {
            l.b.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
        }
        let batch = random_batch(dim, 6, &mut r);
        if ae_kink_distance(&ae, &batch) < 1e-3 {
            continue;
        }
        let (_, grad) = ae.backward(&batch).unwrap();
        let params = ae.flat_params();
        let mut probe = ae.clone();
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            probe.set_flat_params(&p);
            let up = probe.backward(&batch).unwrap().0;
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p);
            let down = probe.backward(&batch).unwrap().0;
            checked += 1;
            if !close(grad[i], (up - down) / (2.0 * h)) {
                bad += 1;
            }
        }
        ae_cases += 1;
    }
    outcome(
        bad == 0,
        format!("{stacks} flow stacks + {ae_cases} autoencoders, {checked} coordinates, {bad} mismatches"),
    )
}

fn auroc_oracle() -> Outcome {
    let mut r = rng(9);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(2..=200);
        let labels: Vec<u8> = (0..n).map(|i| if i == 0 { 0 } else if i == 1 { 1 } else { r.random_range(0..2) }).collect();
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..25) as f64 * 0.5).collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sa, _) in scores.iter().zip(&labels).filter(|(_, &l)| l == 1) {
            for (sn, _) in scores.iter().zip(&labels).filter(|(_, &l)| l == 0) {
                pairs += 1.0;
                wins += if sa > sn { 1.0 } else if sa == sn { 0.5 } else { 0.0 };
            }
        }
        worst = worst.max((auroc_scores(&scores, &labels).unwrap() - wins / pairs).abs());
    }

    // anomalies drawn from the normal law itself
    let mut spec = BenchmarkSpec::default_for(16, 3);
    spec.anomaly.generator = AnomalyGenerator::ShiftedGaussian { shift: 0.0, scale: 1.0 };
    let mut chance = Vec::new();
    for seed in 0..10 {
        let bench = make_benchmark(seed, &spec).unwrap();
        let mut model = FlowModel::adaflow(16, DEFAULT_ALPHA, &mut stage_rng(seed, "init")).unwrap();
        pretrain(&mut model, &bench.pretrain, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        adapt(&mut model, &bench.target_train.head(1000), bench.target_id.clone()).unwrap();
        chance.push(evaluate(&model, &bench.target_test, &bench.target_id).unwrap().auroc.unwrap());
    }
    let mean = chance.iter().sum::<f64>() / chance.len() as f64;
    let spread = chance.iter().fold(0.0f64, |m, a| m.max((a - 0.5).abs()));
    outcome(
        worst < 1e-12 && (mean - 0.5).abs() < 0.03,
        format!("pairwise max |error| {worst:.2e}; chance AUROC mean {mean:.4} over 10 seeds (max per-seed deviation {spread:.4})"),
    )
}

fn table_trend(result: &adaflow::experiment::BenchResult, secs: f64) -> Outcome {
    let row = |m: &str, n: usize| result.row(m, n).unwrap();
    let auc = |m: &str, n: usize| row(m, n).auroc;
    let nll = |m: &str, n: usize| row(m, n).mean_nll.unwrap();
    let flows = [
        auc(METHOD_FLOW, 0),
        auc(METHOD_ADAFLOW, 10),
        auc(METHOD_ADAFLOW, 100),
        auc(METHOD_ADAFLOW, 1000),
        auc(METHOD_FINETUNED, 1000),
    ];
    let checks = [
        ("AUROC flow < AdaFlow(100)", auc(METHOD_FLOW, 0) < auc(METHOD_ADAFLOW, 100)),
        ("AUROC AdaFlow(100) <= AdaFlow(1000)", auc(METHOD_ADAFLOW, 100) <= auc(METHOD_ADAFLOW, 1000)),
        ("AUROC AdaFlow(1000) <= fine-tuned", auc(METHOD_ADAFLOW, 1000) <= auc(METHOD_FINETUNED, 1000)),
        ("AUROC every flow >= AE", flows.iter().all(|&a| a >= auc(METHOD_AE, 0))),
        ("NLL AdaFlow(10) > AdaFlow(100)", nll(METHOD_ADAFLOW, 10) > nll(METHOD_ADAFLOW, 100)),
        ("NLL AdaFlow(100) > AdaFlow(1000)", nll(METHOD_ADAFLOW, 100) > nll(METHOD_ADAFLOW, 1000)),
        ("NLL AdaFlow(1000) >= fine-tuned", nll(METHOD_ADAFLOW, 1000) >= nll(METHOD_FINETUNED, 1000)),
        ("runtime < 15 min", secs < 900.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(name, _)| *name).collect();
    let mut table = String::new();
    for r in &result.summary {
        table.push_str(&format!(
            "\n      {:<16} N={:<5} NLL {:>8} AUROC {:.4}",
            r.method,
            r.n_samples,
            r.mean_nll.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
            r.auroc
        ));
    }
    let verdict = if failed.is_empty() { "all orderings hold".to_string() } else { format!("violated: {}", failed.join("; ")) };
    outcome(failed.is_empty(), format!("{verdict}, {secs:.1}s{table}"))
}

fn timing_trend(result: &adaflow::experiment::BenchResult) -> Outcome {
    let phase = |name: &str| result.timing.iter().find(|(p, _)| p == name).map(|(_, s)| *s).unwrap();
    let adapt_secs = phase("adapt_n1000");
    let finetune_secs = phase("finetune_n1000");

    let bench = make_benchmark(0, &BenchmarkSpec::default_for(16, 3)).unwrap();
    let mut model = FlowModel::adaflow(16, DEFAULT_ALPHA, &mut stage_rng(0, "init")).unwrap();
    pretrain(&mut model, &bench.pretrain, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
    let before = model.clone();
    adapt(&mut model, &bench.target_train.head(1000), bench.target_id.clone()).unwrap();
    let identical = model.layers() == before.layers()
        && flat_params(&model).iter().zip(flat_params(&before)).all(|(a, b)| a.to_bits() == b.to_bits())
        && before.domains().iter().all(|(k, s)| model.domains().get(k) == Some(s));
    let ratio = finetune_secs / adapt_secs;
    outcome(
        ratio >= 5.0 && identical,
        format!(
            "adapt {:.3} ms vs fine-tune {:.1} ms ({ratio:.0}x); parameters bit-identical after adapt: {identical}",
            adapt_secs * 1e3,
            finetune_secs * 1e3
        ),
    )
}

fn translation() -> Outcome {
    let mut r = rng(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = r.random_range(1..=8);
        let (mut model, a) = random_model(dim, r.random_range(1..=6), DEFAULT_ALPHA, &mut r);
        let b = DomainId::from("b");
        let stats = DomainStats {
            layers: model.adabn_indices().collect::<Vec<_>>().into_iter().map(|i| (i, random_stats(dim, &mut r))).collect(),
        };
        model.set_domain(b.clone(), stats).unwrap();
        let x = normal_vec(dim, 1.5, &mut r);
        worst = worst.max(relative_error(&translate(&model, &x, &a, &a).unwrap(), &x));
        let there = translate(&model, &x, &a, &b).unwrap();
        worst = worst.max(relative_error(&translate(&model, &there, &b, &a).unwrap(), &x));
    }

    let mut held = 0;
    for seed in 0..10 {
        let (a, b) = translation_pair(2000);
        let mut sr = stage_rng(seed, "data");
        let data_a = a.sample(a.n_train, &mut sr);
        let data_b = b.sample(b.n_train, &mut sr);
        let mut model = FlowModel::adaflow(2, DEFAULT_ALPHA, &mut stage_rng(seed, "init")).unwrap();
        let domains = BTreeMap::from([(a.name.clone(), data_a.clone()), (b.name.clone(), data_b.clone())]);
        pretrain(&mut model, &domains, &TrainConfig { epochs: 30, seed, ..TrainConfig::default() }).unwrap();
        let moved = translate_batch(&model, &data_a, &a.name, &b.name).unwrap();
        let (mm, mb) = (moments(&moved), moments(&data_b));
        let closer = moment_distance(&moved, &data_b) < moment_distance(&data_a, &data_b);
        let means = (0..2).all(|i| (mm[i] - mb[i]).abs() < 0.2);
        if closer && means {
            held += 1;
        }
    }
    outcome(
        worst < 1e-8 && held >= 8,
        format!("identity max relative error {worst:.2e}; moment transfer held on {held}/10 seeds"),
    )
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_adaflow"))
            .args(["bench", "--seeds", "3", "--out"])
            .arg(d.path())
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("bench exited with {status}"));
        }
    }
    let mut same = true;
    for f in ["results.csv", "results_per_seed.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        same &= a == b && !a.is_empty();
    }
    outcome(same, format!("results.csv and results_per_seed.csv byte-identical: {same}"))
}

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "invertibility", invertibility());
    report(2, "log-det oracle", log_det_oracle());
    report(3, "LDU determinant", ldu_determinant());
    report(4, "density normalization", density_normalization());
    report(5, "gradient oracle", gradient_oracle());
    report(6, "AUROC oracle", auroc_oracle());

    let start = Instant::now();
    let bench = run_bench(&BenchConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(7, "results-table trend", table_trend(&bench, secs));
    report(8, "timing trend", timing_trend(&bench));
    report(9, "translation", translation());
    report(10, "determinism", determinism());

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

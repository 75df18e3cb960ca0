//! The benchmark matrix: a non-adapted flow, the AdaBN flow adapted with
//! several sample budgets, a fine-tuned flow, and the autoencoder baseline,
//! all evaluated on an unseen target domain.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adaptation::adapt;
use crate::baseline::{ae_train, AeModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{DomainId, FlowModel, DEFAULT_ALPHA};
use crate::scoring::evaluate;
use crate::seed::{derive_seed, stage_rng};
use crate::synth::{make_benchmark, BenchmarkSpec};
use crate::training::{finetune, pretrain, TrainConfig};

pub const METHOD_FLOW: &str = "flow";
pub const METHOD_ADAFLOW: &str = "adaflow";
pub const METHOD_FINETUNED: &str = "flow_finetuned";
pub const METHOD_AE: &str = "autoencoder";

/// Domain id under which the non-adaptive flow keeps its pooled statistics.
pub const POOLED: &str = "pooled";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub spec: BenchmarkSpec,
    pub alpha: f64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub ae: TrainConfig,
    pub adapt_sizes: Vec<usize>,
    pub finetune_samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: 10,
            base_seed: 0,
            spec: BenchmarkSpec::default_for(16, 3),
            alpha: DEFAULT_ALPHA,
            pretrain: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 100,
                batch_size: 100,
                ..TrainConfig::finetune()
            },
            ae: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            adapt_sizes: vec![10, 100, 1000],
            finetune_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub n_samples: usize,
    pub mean_nll: Option<f64>,
    pub auroc: f64,
    /// Wall time of the adaptation step (statistics or fine-tuning); zero for methods without one.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<MethodResult>,
    /// `(phase, seconds)` wall times.
    pub timing: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub per_seed: Vec<SeedResult>,
    /// Seed-averaged rows in matrix order.
    pub summary: Vec<MethodResult>,
    /// Seed-averaged wall times per phase.
    pub timing: Vec<(String, f64)>,
}

impl BenchResult {
    pub fn row(&self, method: &str, n_samples: usize) -> Option<&MethodResult> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.n_samples == n_samples)
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn seeded(cfg: &TrainConfig, seed: u64, stage: &str) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed, stage),
        ..cfg.clone()
    }
}

/// Runs the full matrix for one seed.
pub fn run_seed(seed: u64, cfg: &BenchConfig) -> Result<SeedResult> {
    let bench = make_benchmark(seed, &cfg.spec)?;
    let dim = cfg.spec.dim;
    let target = bench.target_id.clone();
    let test = &bench.target_test;
    let mut rows = Vec::new();
    let mut timing = Vec::new();

    // AdaBN flow trained with per-domain statistics
    let mut adaflow = FlowModel::adaflow(dim, cfg.alpha, &mut stage_rng(seed, "bench/init/adaflow"))?;
    let report = pretrain(&mut adaflow, &bench.pretrain, &seeded(&cfg.pretrain, seed, "bench/pretrain/adaflow"))?;
    timing.push(("pretrain_adaflow".to_string(), report.seconds));

    // the same architecture trained as an ordinary batch-norm flow on pooled data
    let pooled_id = DomainId::from(POOLED);
    let pooled = Dataset::concat(bench.pretrain.values())?;
    let mut flow = FlowModel::adaflow(dim, cfg.alpha, &mut stage_rng(seed, "bench/init/flow"))?;
    let report = pretrain(
        &mut flow,
        &BTreeMap::from([(pooled_id.clone(), pooled)]),
        &seeded(&cfg.pretrain, seed, "bench/pretrain/flow"),
    )?;
    timing.push(("pretrain_flow".to_string(), report.seconds));

    // the non-adapted flow evaluates the target with its pooled statistics
    let mut plain = flow.clone();
    let pooled_stats = plain.domain_stats(&pooled_id)?.clone();
    plain.set_domain(target.clone(), pooled_stats)?;
    let r = evaluate(&plain, test, &target)?;
    rows.push(MethodResult {
        method: METHOD_FLOW.into(),
        n_samples: 0,
        mean_nll: r.mean_nll,
        auroc: r.auroc.ok_or(Error::SingleClass)?,
        seconds: 0.0,
    });

    for &n in &cfg.adapt_sizes {
        let samples = bench.target_train.head(n);
        if samples.len() < n {
            return Err(Error::TooFewSamples {
                needed: n,
                found: samples.len(),
            });
        }
        let mut adapted = adaflow.clone();
        let ((), secs) = timed(|| adapt(&mut adapted, &samples, target.clone()))?;
        timing.push((format!("adapt_n{n}"), secs));
        let r = evaluate(&adapted, test, &target)?;
        rows.push(MethodResult {
            method: METHOD_ADAFLOW.into(),
            n_samples: n,
            mean_nll: r.mean_nll,
            auroc: r.auroc.ok_or(Error::SingleClass)?,
            seconds: secs,
        });
    }

    let samples = bench.target_train.head(cfg.finetune_samples);
    let mut tuned = flow.clone();
    let report = finetune(
        &mut tuned,
        &samples,
        target.clone(),
        &seeded(&cfg.finetune, seed, "bench/finetune"),
    )?;
    timing.push((format!("finetune_n{}", cfg.finetune_samples), report.seconds));
    let r = evaluate(&tuned, test, &target)?;
    rows.push(MethodResult {
        method: METHOD_FINETUNED.into(),
        n_samples: cfg.finetune_samples,
        mean_nll: r.mean_nll,
        auroc: r.auroc.ok_or(Error::SingleClass)?,
        seconds: report.seconds,
    });

    let mut ae = AeModel::with_default_architecture(dim, &mut stage_rng(seed, "bench/init/ae"))?;
    let report = ae_train(&mut ae, &bench.pretrain, &seeded(&cfg.ae, seed, "bench/train/ae"))?;
    timing.push(("train_ae".to_string(), report.seconds));
    let r = evaluate(&ae, test, &target)?;
    rows.push(MethodResult {
        method: METHOD_AE.into(),
        n_samples: 0,
        mean_nll: None,
        auroc: r.auroc.ok_or(Error::SingleClass)?,
        seconds: 0.0,
    });

    Ok(SeedResult { seed, rows, timing })
}

/// Runs seeds `base_seed .. base_seed + seeds` and averages per method.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.seeds == 0 {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let per_seed = (0..cfg.seeds as u64)
        .map(|i| run_seed(cfg.base_seed + i, cfg))
        .collect::<Result<Vec<_>>>()?;
    let r = per_seed.len() as f64;
    let summary = (0..per_seed[0].rows.len())
        .map(|j| {
            let first = &per_seed[0].rows[j];
            let mean_nll = first
                .mean_nll
                .map(|_| per_seed.iter().filter_map(|s| s.rows[j].mean_nll).sum::<f64>() / r);
            MethodResult {
                method: first.method.clone(),
                n_samples: first.n_samples,
                mean_nll,
                auroc: per_seed.iter().map(|s| s.rows[j].auroc).sum::<f64>() / r,
                seconds: per_seed.iter().map(|s| s.rows[j].seconds).sum::<f64>() / r,
            }
        })
        .collect();
    let timing = (0..per_seed[0].timing.len())
        .map(|j| {
            let phase = per_seed[0].timing[j].0.clone();
            (phase, per_seed.iter().map(|s| s.timing[j].1).sum::<f64>() / r)
        })
        .collect();
    Ok(BenchResult {
        per_seed,
        summary,
        timing,
    })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// `method,n_samples,mean_nll,auroc,seconds`. Wall times vary between runs,
/// so the `seconds` column is left empty unless `with_seconds` is set.
pub fn write_results_csv<W: Write>(rows: &[MethodResult], with_seconds: bool, writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["method", "n_samples", "mean_nll", "auroc", "seconds"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.n_samples.to_string(),
            r.mean_nll.map(|v| v.to_string()).unwrap_or_default(),
            r.auroc.to_string(),
            if with_seconds { r.seconds.to_string() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-seed rows with a leading `seed` column.
pub fn write_per_seed_csv<W: Write>(results: &[SeedResult], with_seconds: bool, writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["seed", "method", "n_samples", "mean_nll", "auroc", "seconds"])?;
    for s in results {
        for r in &s.rows {
            w.write_record([
                s.seed.to_string(),
                r.method.clone(),
                r.n_samples.to_string(),
                r.mean_nll.map(|v| v.to_string()).unwrap_or_default(),
                r.auroc.to_string(),
                if with_seconds { r.seconds.to_string() } else { String::new() },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `phase,seconds`.
pub fn write_timing_csv<W: Write>(timing: &[(String, f64)], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["phase", "seconds"])?;
    for (phase, secs) in timing {
        w.write_record([phase.clone(), secs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

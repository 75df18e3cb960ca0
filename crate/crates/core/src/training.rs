//! Multi-domain maximum-likelihood training.
//!
//! The objective is `Σ_k mean_n −ln q(x_{n,k})`, one term per domain. Each
//! mini-batch is drawn from a single domain (domains visited round-robin) so
//! the batch statistics seen by AdaBN layers are always domain-pure.
//!
//! Gradients are written out by hand per layer kind. In [`StatsMode::Batch`]
//! the AdaBN mean and variance are functions of the batch and are
//! differentiated through; in [`StatsMode::Frozen`] the registered statistics
//! of the domain are constants.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::layer::{lower_index, upper_index, LinearLdu};
use crate::flow::{log_standard_normal, DomainId, DomainStats, FlowModel, Layer, LayerStats, VARIANCE_EPS};
use crate::optim::{clip_grad_norm, Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsMode {
    /// AdaBN normalizes with the statistics of the current batch.
    Batch,
    /// AdaBN normalizes with the domain's registered statistics.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Weight of the old value in the running average of AdaBN statistics.
    pub stats_momentum: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            stats_momentum: 0.9,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning a pre-trained model.
    pub fn finetune() -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.stats_momentum) {
            return Err(Error::InvalidConfig("stats_momentum must lie in [0, 1)".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Gradient of one layer's parameters; shapes mirror the parameter block.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    LinearLdu {
        lower: Vec<f64>,
        upper: Vec<f64>,
        d: Vec<f64>,
        b: Vec<f64>,
    },
    LeakyRelu,
    AdaBn {
        gamma: Vec<f64>,
        beta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlock {
    pub layers: Vec<LayerGrad>,
}

impl GradientBlock {
    pub fn zeros_like(model: &FlowModel) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| match l {
                Layer::LinearLdu(p) => LayerGrad::LinearLdu {
                    lower: vec![0.0; p.lower.len()],
                    upper: vec![0.0; p.upper.len()],
                    d: vec![0.0; p.d.len()],
                    b: vec![0.0; p.b.len()],
                },
                Layer::LeakyRelu(_) => LayerGrad::LeakyRelu,
                Layer::AdaBn(p) => LayerGrad::AdaBn {
                    gamma: vec![0.0; p.gamma.len()],
                    beta: vec![0.0; p.beta.len()],
                },
            })
            .collect();
        Self { layers }
    }

    /// Concatenation in the order used by [`flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::LinearLdu { lower, upper, d, b } => {
                    out.extend_from_slice(lower);
                    out.extend_from_slice(upper);
                    out.extend_from_slice(d);
                    out.extend_from_slice(b);
                }
                LayerGrad::LeakyRelu => {}
                LayerGrad::AdaBn { gamma, beta } => {
                    out.extend_from_slice(gamma);
                    out.extend_from_slice(beta);
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.flatten().is_empty()
    }
}

/// All learnable parameters, layer by layer (`L`, `U`, `d`, `b` / `γ`, `β`).
pub fn flat_params(model: &FlowModel) -> Vec<f64> {
    let mut out = Vec::new();
    for l in model.layers() {
        match l {
            Layer::LinearLdu(p) => {
                out.extend_from_slice(&p.lower);
                out.extend_from_slice(&p.upper);
                out.extend_from_slice(&p.d);
                out.extend_from_slice(&p.b);
            }
            Layer::LeakyRelu(_) => {}
            Layer::AdaBn(p) => {
                out.extend_from_slice(&p.gamma);
                out.extend_from_slice(&p.beta);
            }
        }
    }
    out
}

/// Inverse of [`flat_params`].
pub fn set_flat_params(model: &mut FlowModel, params: &[f64]) {
    fn take(dst: &mut [f64], src: &[f64], at: &mut usize) {
        dst.copy_from_slice(&src[*at..*at + dst.len()]);
        *at += dst.len();
    }
    let mut at = 0;
    for l in model.layers_mut() {
        match l {
            Layer::LinearLdu(p) => {
                take(&mut p.lower, params, &mut at);
                take(&mut p.upper, params, &mut at);
                take(&mut p.d, params, &mut at);
                take(&mut p.b, params, &mut at);
            }
            Layer::LeakyRelu(_) => {}
            Layer::AdaBn(p) => {
                take(&mut p.gamma, params, &mut at);
                take(&mut p.beta, params, &mut at);
            }
        }
    }
    assert_eq!(at, params.len(), "parameter vector length mismatch");
}

/// Activations recorded by a batch forward pass.
struct Tape {
    n: usize,
    /// Input to each layer, indexed by layer.
    inputs: Vec<Vec<f64>>,
    /// Statistics each AdaBN layer normalized with.
    stats: Vec<Option<LayerStats>>,
    z0: Vec<f64>,
    logdet: Vec<f64>,
}

impl Tape {
    /// Mean negative log-likelihood over the batch.
    fn objective(&self, dim: usize) -> f64 {
        let total: f64 = self
            .z0
            .chunks_exact(dim)
            .zip(&self.logdet)
            .map(|(z, ld)| -(log_standard_normal(z) + ld))
            .sum();
        total / self.n as f64
    }

    fn batch_stats(&self) -> DomainStats {
        let layers = self
            .stats
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.clone().map(|s| (i, s)))
            .collect();
        DomainStats { layers }
    }
}

fn forward_batch(model: &FlowModel, batch: &[f64], frozen: Option<&DomainStats>) -> Result<Tape> {
    let dim = model.dim();
    let n = batch.len() / dim;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let m_count = model.layers().len();
    let mut inputs = vec![Vec::new(); m_count];
    let mut used = vec![None; m_count];
    let mut logdet = vec![0.0; n];
    let mut z = batch.to_vec();
    for m in model.normalize_order() {
        let layer = &model.layers()[m];
        let stats = if layer.is_adabn() {
            match frozen {
                Some(ds) => Some(ds.get(m).ok_or(Error::MissingStats { layer: m })?.clone()),
                None => {
                    if n < 2 {
                        return Err(Error::TooFewSamples { needed: 2, found: n });
                    }
                    Some(LayerStats::from_batch(&z, dim))
                }
            }
        } else {
            None
        };
        let mut out = vec![0.0; z.len()];
        for ((zi, oi), ld) in z
            .chunks_exact(dim)
            .zip(out.chunks_exact_mut(dim))
            .zip(logdet.iter_mut())
        {
            *ld += layer.normalize_unchecked(zi, stats.as_ref(), oi);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("in the output of layer {m}")));
        }
        inputs[m] = std::mem::replace(&mut z, out);
        used[m] = stats;
    }
    Ok(Tape {
        n,
        inputs,
        stats: used,
        z0: z,
        logdet,
    })
}

fn backward_linear(p: &LinearLdu, input: &[f64], g: &[f64], n: usize) -> (LayerGrad, Vec<f64>) {
    let dim = p.dim();
    let mut g_lower = vec![0.0; p.lower.len()];
    let mut g_upper = vec![0.0; p.upper.len()];
    let mut g_d = vec![0.0; dim];
    let mut g_b = vec![0.0; dim];
    let mut g_in = vec![0.0; input.len()];
    let mut u = vec![0.0; dim];
    let mut gs = vec![0.0; dim];
    for r in 0..n {
        let z = &input[r * dim..(r + 1) * dim];
        let gy = &g[r * dim..(r + 1) * dim];
        p.apply_upper(z, &mut u);
        // y = L s + b with s = d ⊙ u
        for i in 0..dim {
            g_b[i] += gy[i];
        }
        for j in 0..dim {
            let mut acc = gy[j];
            for i in j + 1..dim {
                acc += p.lower[lower_index(i, j)] * gy[i];
            }
            gs[j] = acc;
        }
        for i in 1..dim {
            for j in 0..i {
                g_lower[lower_index(i, j)] += gy[i] * p.d[j] * u[j];
            }
        }
        // s = d ⊙ u; reuse gs as gu
        for i in 0..dim {
            g_d[i] += gs[i] * u[i];
            gs[i] *= p.d[i];
        }
        // u = U z
        for i in 0..dim {
            for j in i + 1..dim {
                g_upper[upper_index(dim, i, j)] += gs[i] * z[j];
            }
        }
        let gz = &mut g_in[r * dim..(r + 1) * dim];
        for j in 0..dim {
            let mut acc = gs[j];
            for i in 0..j {
                acc += p.upper[upper_index(dim, i, j)] * gs[i];
            }
            gz[j] = acc;
        }
    }
    for (gd, d) in g_d.iter_mut().zip(&p.d) {
        *gd -= 1.0 / d;
    }
    (
        LayerGrad::LinearLdu {
            lower: g_lower,
            upper: g_upper,
            d: g_d,
            b: g_b,
        },
        g_in,
    )
}

fn backward_adabn(
    gamma: &[f64],
    stats: &LayerStats,
    input: &[f64],
    g: &[f64],
    n: usize,
    mode: StatsMode,
) -> (LayerGrad, Vec<f64>) {
    let dim = gamma.len();
    let nf = n as f64;
    let mut g_gamma = vec![0.0; dim];
    let mut g_beta = vec![0.0; dim];
    let mut sum_gx = vec![0.0; dim];
    let mut sum_gx_x = vec![0.0; dim];
    let inv_std: Vec<f64> = stats
        .sigma
        .iter()
        .map(|s| 1.0 / (s + VARIANCE_EPS).sqrt())
        .collect();
    for r in 0..n {
        for i in 0..dim {
            let x_hat = (input[r * dim + i] - stats.mu[i]) * inv_std[i];
            let gy = g[r * dim + i];
            g_beta[i] += gy;
            g_gamma[i] += gy * x_hat;
            let gx = gy * gamma[i];
            sum_gx[i] += gx;
            sum_gx_x[i] += gx * x_hat;
        }
    }
    let mut g_in = vec![0.0; input.len()];
    for r in 0..n {
        for i in 0..dim {
            let gx = g[r * dim + i] * gamma[i];
            g_in[r * dim + i] = match mode {
                StatsMode::Frozen => gx * inv_std[i],
                StatsMode::Batch => {
                    let c = input[r * dim + i] - stats.mu[i];
                    let x_hat = c * inv_std[i];
                    inv_std[i] / nf * (nf * gx - sum_gx[i] - x_hat * sum_gx_x[i])
                        // the −½ ln(σ+ε) log-det term depends on the batch variance
                        + c / (nf * (stats.sigma[i] + VARIANCE_EPS))
                }
            };
        }
    }
    for (gg, g) in g_gamma.iter_mut().zip(gamma) {
        *gg -= 1.0 / g;
    }
    (
        LayerGrad::AdaBn {
            gamma: g_gamma,
            beta: g_beta,
        },
        g_in,
    )
}

fn backward_tape(model: &FlowModel, tape: &Tape, mode: StatsMode) -> GradientBlock {
    let dim = model.dim();
    let n = tape.n;
    let mut grads = GradientBlock::zeros_like(model);
    let mut g: Vec<f64> = tape.z0.iter().map(|z| z / n as f64).collect();
    // normalize visits M..1, so gradients flow 1..M
    for (m, layer) in model.layers().iter().enumerate() {
        let input = &tape.inputs[m];
        let (lg, g_in) = match layer {
            Layer::LinearLdu(p) => backward_linear(p, input, &g, n),
            Layer::LeakyRelu(r) => {
                let g_in = input.iter().zip(&g).map(|(z, gy)| gy * r.slope(*z)).collect();
                (LayerGrad::LeakyRelu, g_in)
            }
            Layer::AdaBn(p) => {
                let stats = tape.stats[m].as_ref().expect("AdaBN stats recorded");
                backward_adabn(&p.gamma, stats, input, &g, n, mode)
            }
        };
        grads.layers[m] = lg;
        g = g_in;
    }
    debug_assert_eq!(g.len(), n * dim);
    grads
}

fn check_batch(model: &FlowModel, batch: &Dataset, k: &DomainId) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: batch.dim(),
        });
    }
    if !model.has_domain(k) {
        return Err(Error::UnknownDomain(k.to_string()));
    }
    batch.check_finite()
}

fn forward_mode(model: &FlowModel, values: &[f64], k: &DomainId, mode: StatsMode) -> Result<Tape> {
    match mode {
        StatsMode::Frozen => forward_batch(model, values, Some(model.domain_stats(k)?)),
        StatsMode::Batch => forward_batch(model, values, None),
    }
}

/// Mean negative log-likelihood of one domain's batch.
pub fn batch_nll(model: &FlowModel, batch: &Dataset, k: &DomainId, mode: StatsMode) -> Result<f64> {
    check_batch(model, batch, k)?;
    Ok(forward_mode(model, batch.values(), k, mode)?.objective(model.dim()))
}

/// `Σ_k mean_n −ln q(x_{n,k})` over per-domain batches.
pub fn nll_objective(
    model: &FlowModel,
    batches: &BTreeMap<DomainId, Dataset>,
    mode: StatsMode,
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batches
        .iter()
        .map(|(k, b)| batch_nll(model, b, k, mode))
        .sum()
}

/// Objective and parameter gradient for a single-domain batch.
pub fn backward(
    model: &FlowModel,
    batch: &Dataset,
    k: &DomainId,
    mode: StatsMode,
) -> Result<(f64, GradientBlock)> {
    check_batch(model, batch, k)?;
    let tape = forward_mode(model, batch.values(), k, mode)?;
    Ok((tape.objective(model.dim()), backward_tape(model, &tape, mode)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub domain: DomainId,
    pub nll: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Training-set NLL per domain with the running statistics; epoch 0 is before any update.
    pub loss_curve: Vec<LossPoint>,
    pub steps: usize,
    pub seconds: f64,
}

impl TrainReport {
    pub fn write_loss_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["epoch", "domain_id", "nll"])?;
        for p in &self.loss_curve {
            w.write_record([p.epoch.to_string(), p.domain.to_string(), p.nll.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Final-epoch NLL of a domain.
    pub fn final_nll(&self, k: &DomainId) -> Option<f64> {
        self.loss_curve.iter().rev().find(|p| &p.domain == k).map(|p| p.nll)
    }

    pub fn initial_nll(&self, k: &DomainId) -> Option<f64> {
        self.loss_curve.iter().find(|p| &p.domain == k).map(|p| p.nll)
    }
}

fn check_datasets(model: &FlowModel, datasets: &BTreeMap<DomainId, Dataset>, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::InvalidConfig("no training datasets".into()));
    }
    for ds in datasets.values() {
        if ds.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: ds.dim(),
            });
        }
        if ds.len() < cfg.batch_size {
            return Err(Error::TooFewSamples {
                needed: cfg.batch_size,
                found: ds.len(),
            });
        }
        ds.check_finite()?;
    }
    Ok(())
}

fn record_losses(
    model: &FlowModel,
    datasets: &BTreeMap<DomainId, Dataset>,
    epoch: usize,
    curve: &mut Vec<LossPoint>,
) -> Result<()> {
    for (k, ds) in datasets {
        let nll = batch_nll(model, ds, k, StatsMode::Frozen)?;
        curve.push(LossPoint {
            epoch,
            domain: k.clone(),
            nll,
        });
    }
    Ok(())
}

fn bad_parameters(model: &FlowModel) -> bool {
    model.layers().iter().any(|l| match l {
        Layer::LinearLdu(p) => p.d.iter().any(|&d| d == 0.0 || !d.is_finite()),
        Layer::AdaBn(p) => p.gamma.iter().any(|&g| g == 0.0 || !g.is_finite()),
        Layer::LeakyRelu(_) => false,
    })
}

/// Shared optimization loop: statistics for every domain must already be registered.
fn optimize(
    model: &mut FlowModel,
    datasets: &BTreeMap<DomainId, Dataset>,
    cfg: &TrainConfig,
    report: &mut TrainReport,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = flat_params(model);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut orders: BTreeMap<&DomainId, Vec<usize>> =
        datasets.iter().map(|(k, ds)| (k, (0..ds.len()).collect())).collect();
    let mut batch_values = Vec::new();
    for epoch in 1..=cfg.epochs {
        for order in orders.values_mut() {
            order.shuffle(&mut rng);
        }
        let n_batches = datasets
            .values()
            .map(|ds| ds.len().div_ceil(cfg.batch_size))
            .max()
            .unwrap_or(0);
        let mut batch_index = 0;
        for b in 0..n_batches {
            for (k, ds) in datasets {
                let order = &orders[k];
                let lo = b * cfg.batch_size;
                let hi = (lo + cfg.batch_size).min(order.len());
                if hi <= lo || hi - lo < 2 {
                    continue;
                }
                batch_values.clear();
                for &i in &order[lo..hi] {
                    batch_values.extend_from_slice(ds.row(i));
                }
                let diverged = Error::Diverged {
                    epoch,
                    batch: batch_index,
                };
                let tape = forward_batch(model, &batch_values, None).map_err(|_| diverged)?;
                let objective = tape.objective(model.dim());
                if !objective.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_index,
                    });
                }
                let mut grads = backward_tape(model, &tape, StatsMode::Batch).flatten();
                if let Some(c) = cfg.grad_clip {
                    clip_grad_norm(&mut grads, c);
                }
                opt.step(&mut params, &grads);
                set_flat_params(model, &params);
                if bad_parameters(model) {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_index,
                    });
                }
                let batch_stats = tape.batch_stats();
                let running = model
                    .domain_stats_mut(k)
                    .ok_or_else(|| Error::UnknownDomain(k.to_string()))?;
                blend_stats(running, &batch_stats, cfg.stats_momentum);
                report.steps += 1;
                batch_index += 1;
            }
        }
        record_losses(model, datasets, epoch, &mut report.loss_curve)?;
    }
    Ok(())
}

fn blend_stats(running: &mut DomainStats, batch: &DomainStats, momentum: f64) {
    for (i, r) in running.layers.iter_mut() {
        let b = &batch.layers[i];
        for (rv, bv) in r.mu.iter_mut().zip(&b.mu) {
            *rv = momentum * *rv + (1.0 - momentum) * bv;
        }
        for (rv, bv) in r.sigma.iter_mut().zip(&b.sigma) {
            *rv = momentum * *rv + (1.0 - momentum) * bv;
        }
    }
}

/// Trains every parameter on all domains jointly and registers each domain's
/// running statistics.
pub fn pretrain(
    model: &mut FlowModel,
    datasets: &BTreeMap<DomainId, Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_datasets(model, datasets, cfg)?;
    let start = Instant::now();
    for (k, ds) in datasets {
        adaptation::adapt(model, ds, k.clone())?;
    }
    let mut report = TrainReport::default();
    record_losses(model, datasets, 0, &mut report.loss_curve)?;
    optimize(model, datasets, cfg, &mut report)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Registers `k_new` and updates every parameter by gradient descent on its data only.
pub fn finetune(
    model: &mut FlowModel,
    dataset: &Dataset,
    k_new: DomainId,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let datasets = BTreeMap::from([(k_new.clone(), dataset.clone())]);
    check_datasets(model, &datasets, cfg)?;
    let start = Instant::now();
    adaptation::adapt(model, dataset, k_new)?;
    let mut report = TrainReport::default();
    record_losses(model, &datasets, 0, &mut report.loss_curve)?;
    optimize(model, &datasets, cfg, &mut report)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

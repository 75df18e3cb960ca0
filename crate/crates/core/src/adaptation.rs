//! Registering a new domain from its samples with one forward pass and no
//! parameter updates.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{DomainId, DomainStats, FlowModel, LayerStats};

/// Computes `k_new`'s AdaBN statistics and registers them, replacing any
/// previous statistics for that id.
///
/// The whole batch is pushed through the stack in normalize order. Each AdaBN
/// layer records the population mean/variance of its incoming activations and
/// then normalizes the batch with those fresh values, so downstream layers see
/// activations consistent with the statistics being stored.
pub fn adapt(model: &mut FlowModel, samples: &Dataset, k_new: DomainId) -> Result<()> {
    let stats = compute_stats(model, samples)?;
    model.set_domain(k_new, stats)
}

/// The statistics [`adapt`] would register, without touching the model.
pub fn compute_stats(model: &FlowModel, samples: &Dataset) -> Result<DomainStats> {
    let dim = model.dim();
    if samples.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: samples.dim(),
        });
    }
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: samples.len(),
        });
    }
    samples.check_finite()?;
    let mut stats = DomainStats::default();
    let mut z = samples.values().to_vec();
    let mut out = vec![0.0; z.len()];
    for m in model.normalize_order() {
        let layer = &model.layers()[m];
        let fresh = layer.is_adabn().then(|| LayerStats::from_batch(&z, dim));
        for (zi, oi) in z.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
            layer.normalize_unchecked(zi, fresh.as_ref(), oi);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("in the output of layer {m}")));
        }
        if let Some(s) = fresh {
            stats.layers.insert(m, s);
        }
        std::mem::swap(&mut z, &mut out);
    }
    Ok(stats)
}

/// Drops a domain's statistics.
pub fn remove_domain(model: &mut FlowModel, k: &DomainId) -> Result<DomainStats> {
    model
        .take_domain(k)
        .ok_or_else(|| Error::UnknownDomain(k.to_string()))
}

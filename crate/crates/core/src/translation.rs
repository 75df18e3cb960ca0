//! Unpaired cross-domain translation: normalize with the source domain's
//! statistics, generate with the target domain's.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{DomainId, FlowModel, LayerStats};

pub fn translate(model: &FlowModel, x: &[f64], from: &DomainId, to: &DomainId) -> Result<Vec<f64>> {
    if !model.has_domain(to) {
        return Err(Error::UnknownDomain(to.to_string()));
    }
    let (z0, _) = model.normalize(x, from)?;
    model.generate(&z0, to)
}

/// Row-wise [`translate`]; labels and domain tags are not carried over.
pub fn translate_batch(model: &FlowModel, data: &Dataset, from: &DomainId, to: &DomainId) -> Result<Dataset> {
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: data.dim(),
        });
    }
    for k in [from, to] {
        if !model.has_domain(k) {
            return Err(Error::UnknownDomain(k.to_string()));
        }
    }
    let mut out = Vec::with_capacity(data.values().len());
    for x in data.rows() {
        out.extend(translate(model, x, from, to)?);
    }
    Dataset::new(data.dim(), out)
}

/// Per-coordinate means followed by per-coordinate population variances.
pub fn moments(data: &Dataset) -> Vec<f64> {
    let stats = LayerStats::from_batch(data.values(), data.dim());
    stats.mu.into_iter().chain(stats.sigma).collect()
}

/// Euclidean distance between the [`moments`] of two sample sets.
pub fn moment_distance(a: &Dataset, b: &Dataset) -> f64 {
    moments(a)
        .iter()
        .zip(moments(b))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

//! The flow model: an ordered stack of invertible layers plus per-domain
//! batch-norm statistics.
//!
//! Layers are stored as `f_1, …, f_M`, from the latent side to the data side.
//! [`FlowModel::normalize`] maps data to latent by running `f_M … f_1`, each
//! in its written (normalize) direction; [`FlowModel::generate`] runs the
//! inverses `f_1 … f_M`.

mod io;
pub mod layer;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use io::FORMAT_VERSION;
pub(crate) use io::to_precise_json;
pub use layer::{AdaBn, Layer, LayerStats, LeakyRelu, LinearLdu, DEFAULT_ALPHA, VARIANCE_EPS};

/// `½ ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(String);

impl DomainId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DomainId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for DomainId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Statistics of one domain, keyed by the index of each AdaBN layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainStats {
    pub layers: BTreeMap<usize, LayerStats>,
}

impl DomainStats {
    pub fn get(&self, layer: usize) -> Option<&LayerStats> {
        self.layers.get(&layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dim: usize,
    alpha: f64,
    layers: Vec<Layer>,
    domains: BTreeMap<DomainId, DomainStats>,
}

impl FlowModel {
    /// Builds a model from layers listed as `f_1, …, f_M` (latent side first).
    pub fn new(dim: usize, alpha: f64, layers: Vec<Layer>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        LeakyRelu::new(alpha)?;
        let model = Self {
            dim,
            alpha,
            layers,
            domains: BTreeMap::new(),
        };
        model.check_layers()?;
        Ok(model)
    }

    /// Builds a model from layers listed in the order `normalize` applies them
    /// (data side first).
    pub fn from_normalize_order(dim: usize, alpha: f64, mut layers: Vec<Layer>) -> Result<Self> {
        layers.reverse();
        Self::new(dim, alpha, layers)
    }

    /// The experiment architecture: linear, AdaBN, leaky ReLU, linear, AdaBN
    /// (in normalize order), freshly initialized.
    pub fn adaflow<R: Rng + ?Sized>(dim: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        Self::from_normalize_order(
            dim,
            alpha,
            vec![
                Layer::LinearLdu(LinearLdu::init(dim, rng)),
                Layer::AdaBn(AdaBn::identity(dim)),
                Layer::LeakyRelu(LeakyRelu::new(alpha)?),
                Layer::LinearLdu(LinearLdu::init(dim, rng)),
                Layer::AdaBn(AdaBn::identity(dim)),
            ],
        )
    }

    fn check_layers(&self) -> Result<()> {
        for layer in &self.layers {
            if let Some(d) = layer.dim() {
                if d != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: d,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Layers as `f_1, …, f_M`.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Layer indices in the order `normalize` visits them.
    pub fn normalize_order(&self) -> impl DoubleEndedIterator<Item = usize> {
        (0..self.layers.len()).rev()
    }

    pub fn adabn_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_adabn())
            .map(|(i, _)| i)
    }

    pub fn domains(&self) -> &BTreeMap<DomainId, DomainStats> {
        &self.domains
    }

    pub fn has_domain(&self, k: &DomainId) -> bool {
        self.domains.contains_key(k)
    }

    pub fn domain_stats(&self, k: &DomainId) -> Result<&DomainStats> {
        self.domains
            .get(k)
            .ok_or_else(|| Error::UnknownDomain(k.to_string()))
    }

    /// Registers (or replaces) a domain. The statistics must cover exactly the AdaBN layers.
    pub fn set_domain(&mut self, k: DomainId, stats: DomainStats) -> Result<()> {
        let expected: Vec<usize> = self.adabn_indices().collect();
        let found: Vec<usize> = stats.layers.keys().copied().collect();
        if expected != found {
            return Err(Error::InvalidConfig(format!(
                "domain `{k}` has statistics for layers {found:?}, AdaBN layers are {expected:?}"
            )));
        }
        for (&i, s) in &stats.layers {
            self.layers[i].validate(i, Some(s))?;
        }
        self.domains.insert(k, stats);
        Ok(())
    }

    pub(crate) fn domain_stats_mut(&mut self, k: &DomainId) -> Option<&mut DomainStats> {
        self.domains.get_mut(k)
    }

    pub(crate) fn take_domain(&mut self, k: &DomainId) -> Option<DomainStats> {
        self.domains.remove(k)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("in the input sample"));
        }
        Ok(())
    }

    /// Maps `x` to its latent image under domain `k`; returns `(z0, Σ ln|det J|)`.
    pub fn normalize(&self, x: &[f64], k: &DomainId) -> Result<(Vec<f64>, f64)> {
        self.check_input(x)?;
        let stats = self.domain_stats(k)?;
        let mut z = x.to_vec();
        let mut next = vec![0.0; self.dim];
        let mut logdet = 0.0;
        for m in self.normalize_order() {
            let layer = &self.layers[m];
            let s = stats.get(m);
            if layer.is_adabn() && s.is_none() {
                return Err(Error::MissingStats { layer: m });
            }
            logdet += layer.normalize_unchecked(&z, s, &mut next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("in the output of layer {m}")));
            }
            std::mem::swap(&mut z, &mut next);
        }
        Ok((z, logdet))
    }

    /// Maps a latent vector to data space under domain `k`.
    pub fn generate(&self, z0: &[f64], k: &DomainId) -> Result<Vec<f64>> {
        self.check_input(z0)?;
        let stats = self.domain_stats(k)?;
        let mut z = z0.to_vec();
        for (m, layer) in self.layers.iter().enumerate() {
            z = layer.generate_at(m, &z, stats.get(m))?;
        }
        Ok(z)
    }

    /// `ln q(x)` under domain `k`.
    pub fn log_likelihood(&self, x: &[f64], k: &DomainId) -> Result<f64> {
        let (z0, logdet) = self.normalize(x, k)?;
        Ok(log_standard_normal(&z0) + logdet)
    }
}

/// Log-density of the standard normal base distribution.
pub fn log_standard_normal(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -(z.len() as f64) * HALF_LN_2PI - 0.5 * sq
}

//! Invertible layers.
//!
//! Every layer is written in the normalize direction (data side toward the
//! latent side); `generate` applies the algebraic inverse.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added to every variance before taking the square root.
pub const VARIANCE_EPS: f64 = 1e-5;

/// Default leaky-ReLU slope.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Per-layer statistics of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mu: Vec<f64>,
    /// Population variance.
    pub sigma: Vec<f64>,
}

impl LayerStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        Self { mu, sigma }
    }

    /// Mean and population (1/N) variance of each column of a row-major batch.
    pub fn from_batch(batch: &[f64], dim: usize) -> Self {
        let n = batch.len() / dim;
        let mut mu = vec![0.0; dim];
        for row in batch.chunks_exact(dim) {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        let mut sigma = vec![0.0; dim];
        for row in batch.chunks_exact(dim) {
            for ((s, v), m) in sigma.iter_mut().zip(row).zip(&mu) {
                let c = v - m;
                *s += c * c;
            }
        }
        sigma.iter_mut().for_each(|s| *s /= n as f64);
        Self { mu, sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Position of `(i, j)`, `j < i`, in the packed strictly-lower triangle.
#[inline]
pub fn lower_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

/// Position of `(i, j)`, `i < j`, in the packed strictly-upper triangle of a `dim`-square matrix.
#[inline]
pub fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    i * dim - i * (i + 1) / 2 + (j - i - 1)
}

/// Number of strictly-triangular entries of a `dim`-square matrix.
#[inline]
pub fn triangle_len(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

/// `z ↦ L·diag(d)·U·z + b` with unit-diagonal triangular `L` and `U`.
///
/// `lower` and `upper` hold only the strictly-triangular entries, packed row
/// by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLdu {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub d: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearLdu {
    pub fn identity(dim: usize) -> Self {
        Self {
            lower: vec![0.0; triangle_len(dim)],
            upper: vec![0.0; triangle_len(dim)],
            d: vec![1.0; dim],
            b: vec![0.0; dim],
        }
    }

    /// Near-identity start: triangular entries drawn with variance 0.01.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut layer = Self::identity(dim);
        layer.lower.iter_mut().for_each(|v| *v = normal.sample(rng));
        layer.upper.iter_mut().for_each(|v| *v = normal.sample(rng));
        layer
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Dense `W = L·diag(d)·U`, row-major.
    pub fn weight(&self) -> Vec<f64> {
        let n = self.dim();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    let l = if k == i { 1.0 } else { self.lower[lower_index(i, k)] };
                    let u = if k == j { 1.0 } else { self.upper[upper_index(n, k, j)] };
                    acc += l * self.d[k] * u;
                }
                w[i * n + j] = acc;
            }
        }
        w
    }

    pub fn log_abs_det(&self) -> f64 {
        self.d.iter().map(|d| d.abs().ln()).sum()
    }

    /// Writes `U·z` into `u`.
    #[inline]
    pub(crate) fn apply_upper(&self, z: &[f64], u: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = z[i];
            for j in i + 1..n {
                acc += self.upper[upper_index(n, i, j)] * z[j];
            }
            u[i] = acc;
        }
    }

    #[inline]
    pub(crate) fn forward_into(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut s = vec![0.0; n];
        self.apply_upper(z, &mut s);
        for (si, di) in s.iter_mut().zip(&self.d) {
            *si *= di;
        }
        for i in 0..n {
            let mut acc = s[i] + self.b[i];
            for j in 0..i {
                acc += self.lower[lower_index(i, j)] * s[j];
            }
            out[i] = acc;
        }
    }

    /// Solves `L·diag(d)·U·z = y − b` by two triangular substitutions.
    pub(crate) fn inverse_into(&self, y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut s = vec![0.0; n];
        for i in 0..n {
            let mut acc = y[i] - self.b[i];
            for j in 0..i {
                acc -= self.lower[lower_index(i, j)] * s[j];
            }
            s[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = s[i] / self.d[i];
            for j in i + 1..n {
                acc -= self.upper[upper_index(n, i, j)] * out[j];
            }
            out[i] = acc;
        }
    }

    fn check(&self, layer: usize) -> Result<()> {
        let n = self.dim();
        if self.b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.b.len(),
            });
        }
        for tri in [&self.lower, &self.upper] {
            if tri.len() != triangle_len(n) {
                return Err(Error::DimensionMismatch {
                    expected: triangle_len(n),
                    found: tri.len(),
                });
            }
        }
        if let Some(index) = self.d.iter().position(|&v| v == 0.0) {
            return Err(Error::Singular { layer, index });
        }
        Ok(())
    }
}

/// Elementwise `max(z, αz)`; `α` is fixed, never trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakyRelu {
    pub alpha: f64,
}

impl LeakyRelu {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leaky-ReLU slope must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Slope applied to a normalize-direction input; zero takes the identity branch.
    #[inline]
    pub fn slope(&self, z: f64) -> f64 {
        if z < 0.0 {
            self.alpha
        } else {
            1.0
        }
    }
}

/// Batch normalization whose statistics are looked up per domain.
///
/// `gamma` and `beta` are shared by every domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBn {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl AdaBn {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn log_abs_det(&self, stats: &LayerStats) -> f64 {
        self.gamma
            .iter()
            .zip(&stats.sigma)
            .map(|(g, s)| g.abs().ln() - 0.5 * (s + VARIANCE_EPS).ln())
            .sum()
    }

    fn check(&self, layer: usize, stats: &LayerStats) -> Result<()> {
        let n = self.dim();
        if self.beta.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.beta.len(),
            });
        }
        if stats.mu.len() != n || stats.sigma.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: stats.mu.len().min(stats.sigma.len()),
            });
        }
        if let Some(index) = self.gamma.iter().position(|&v| v == 0.0) {
            return Err(Error::Singular { layer, index });
        }
        if stats.sigma.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "layer {layer}: variances must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum Layer {
    LinearLdu(LinearLdu),
    LeakyRelu(LeakyRelu),
    AdaBn(AdaBn),
}

impl Layer {
    pub fn is_adabn(&self) -> bool {
        matches!(self, Layer::AdaBn(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::LinearLdu(_) => "LinearLdu",
            Layer::LeakyRelu(_) => "LeakyRelu",
            Layer::AdaBn(_) => "AdaBn",
        }
    }

    /// Dimensionality, or `None` for the dimension-agnostic leaky ReLU.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Layer::LinearLdu(l) => Some(l.dim()),
            Layer::LeakyRelu(_) => None,
            Layer::AdaBn(a) => Some(a.dim()),
        }
    }

    /// Validates shapes, bijectivity, and the stats/kind pairing.
    pub fn validate(&self, index: usize, stats: Option<&LayerStats>) -> Result<()> {
        match (self, stats) {
            (Layer::AdaBn(a), Some(s)) => a.check(index, s),
            (Layer::AdaBn(_), None) => Err(Error::MissingStats { layer: index }),
            (_, Some(_)) => Err(Error::UnexpectedStats { layer: index }),
            (Layer::LinearLdu(l), None) => l.check(index),
            (Layer::LeakyRelu(r), None) => LeakyRelu::new(r.alpha).map(|_| ()),
        }
    }

    /// Applies the layer in the normalize direction; returns the output and `ln|det J|`.
    pub fn normalize(&self, z: &[f64], stats: Option<&LayerStats>) -> Result<(Vec<f64>, f64)> {
        self.normalize_at(0, z, stats)
    }

    pub(crate) fn normalize_at(
        &self,
        index: usize,
        z: &[f64],
        stats: Option<&LayerStats>,
    ) -> Result<(Vec<f64>, f64)> {
        self.validate(index, stats)?;
        if let Some(dim) = self.dim() {
            if z.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: z.len(),
                });
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("in the input of layer {index}")));
        }
        let mut out = vec![0.0; z.len()];
        let logdet = self.normalize_unchecked(z, stats, &mut out);
        Ok((out, logdet))
    }

    /// Normalize-direction map without validation. AdaBN layers require `stats`.
    #[inline]
    pub(crate) fn normalize_unchecked(
        &self,
        z: &[f64],
        stats: Option<&LayerStats>,
        out: &mut [f64],
    ) -> f64 {
        match self {
            Layer::LinearLdu(l) => {
                l.forward_into(z, out);
                l.log_abs_det()
            }
            Layer::LeakyRelu(r) => {
                let mut negatives = 0usize;
                for (o, &v) in out.iter_mut().zip(z) {
                    if v < 0.0 {
                        negatives += 1;
                        *o = r.alpha * v;
                    } else {
                        *o = v;
                    }
                }
                negatives as f64 * r.alpha.ln()
            }
            Layer::AdaBn(a) => {
                let s = stats.expect("AdaBN layer without statistics");
                for i in 0..a.dim() {
                    let inv_std = 1.0 / (s.sigma[i] + VARIANCE_EPS).sqrt();
                    out[i] = a.gamma[i] * (z[i] - s.mu[i]) * inv_std + a.beta[i];
                }
                a.log_abs_det(s)
            }
        }
    }

    /// Applies the inverse map (generate direction).
    pub fn generate(&self, y: &[f64], stats: Option<&LayerStats>) -> Result<Vec<f64>> {
        self.generate_at(0, y, stats)
    }

    pub(crate) fn generate_at(
        &self,
        index: usize,
        y: &[f64],
        stats: Option<&LayerStats>,
    ) -> Result<Vec<f64>> {
        self.validate(index, stats)?;
        if let Some(dim) = self.dim() {
            if y.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: y.len(),
                });
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("in the output of layer {index}")));
        }
        let mut out = vec![0.0; y.len()];
        match self {
            Layer::LinearLdu(l) => l.inverse_into(y, &mut out),
            Layer::LeakyRelu(r) => {
                for (o, &v) in out.iter_mut().zip(y) {
                    *o = if v < 0.0 { v / r.alpha } else { v };
                }
            }
            Layer::AdaBn(a) => {
                let s = stats.expect("validated");
                for i in 0..a.dim() {
                    let std = (s.sigma[i] + VARIANCE_EPS).sqrt();
                    out[i] = (y[i] - a.beta[i]) / a.gamma[i] * std + s.mu[i];
                }
            }
        }
        Ok(out)
    }
}

//! Seeded multi-domain synthetic benchmarks.
//!
//! Every domain shares one Gaussian-mixture base shape and differs by an
//! affine transform (a rotation in the first coordinate plane, a scale, and a
//! shift). Training splits are normal-only; the target test split mixes
//! normal samples with generated anomalies.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, ANOMALY, NORMAL};
use crate::error::{Error, Result};
use crate::flow::DomainId;
use crate::seed::stage_rng;

/// Lower Cholesky factor of a symmetric positive-definite matrix, or `None`.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 * (1.0 + a[i * n + j].abs()) {
                return None;
            }
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Cholesky factors of the component covariances.
    factors: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::InvalidConfig("mixture component counts disagree".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("mixture weights must be non-negative and sum to 1".into()));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidConfig("mixture dimension must be positive".into()));
        }
        let mut factors = Vec::with_capacity(covariances.len());
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != dim || c.len() != dim * dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.len(),
                });
            }
            factors.push(cholesky(c, dim).ok_or_else(|| {
                Error::InvalidConfig("mixture covariance is not symmetric positive definite".into())
            })?);
        }
        Ok(Self {
            dim,
            weights,
            means,
            factors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    /// Per-coordinate variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; self.dim];
        for ((w, m), l) in self.weights.iter().zip(&self.means).zip(&self.factors) {
            for i in 0..self.dim {
                let cov_ii: f64 = (0..=i).map(|k| l[i * self.dim + k].powi(2)).sum();
                out[i] += w * (cov_ii + (m[i] - mean[i]).powi(2));
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        let e: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        let l = &self.factors[c];
        (0..self.dim)
            .map(|i| self.means[c][i] + (0..=i).map(|k| l[i * self.dim + k] * e[k]).sum::<f64>())
            .collect()
    }
}

/// `x ↦ A·x + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub matrix: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        Self::plane_rotation(dim, 0.0, 1.0, vec![0.0; dim])
    }

    /// Rotation by `degrees` in the `(x0, x1)` plane, then uniform scaling, then a shift.
    pub fn plane_rotation(dim: usize, degrees: f64, scale: f64, shift: Vec<f64>) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = scale;
        }
        if dim >= 2 {
            let (s, c) = degrees.to_radians().sin_cos();
            matrix[0] = scale * c;
            matrix[1] = -scale * s;
            matrix[dim] = scale * s;
            matrix[dim + 1] = scale * c;
        }
        Self { matrix, shift }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| self.shift[i] + (0..n).map(|j| self.matrix[i * n + j] * x[j]).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub name: DomainId,
    pub base: GaussianMixture,
    pub transform: AffineTransform,
    pub n_train: usize,
    pub n_test: usize,
}

impl DomainSpec {
    /// Mean of the transformed law.
    pub fn mean(&self) -> Vec<f64> {
        self.transform.apply(&self.base.mean())
    }

    /// Per-coordinate variance of the transformed law.
    pub fn variance(&self) -> Vec<f64> {
        // Var(Ax)_ii = Σ_jk A_ij A_ik Cov_jk; build the mixture covariance explicitly
        let n = self.base.dim;
        let mean = self.base.mean();
        let mut cov = vec![0.0; n * n];
        for ((w, m), l) in self.base.weights.iter().zip(&self.base.means).zip(&self.base.factors) {
            for i in 0..n {
                for j in 0..n {
                    let llt: f64 = (0..=i.min(j)).map(|k| l[i * n + k] * l[j * n + k]).sum();
                    cov[i * n + j] += w * (llt + (m[i] - mean[i]) * (m[j] - mean[j]));
                }
            }
        }
        let a = &self.transform.matrix;
        (0..n)
            .map(|i| {
                let mut v = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        v += a[i * n + j] * a[i * n + k] * cov[j * n + k];
                    }
                }
                v
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let mut values = Vec::with_capacity(n * self.base.dim);
        for _ in 0..n {
            values.extend(self.transform.apply(&self.base.sample(rng)));
        }
        Dataset::new(self.base.dim, values).expect("positive dimension")
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.base.dim != dim || self.transform.dim() != dim || self.transform.matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.base.dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnomalyGenerator {
    /// Uniform over the box `mean ± half_width · std` of the target domain, per coordinate.
    UniformBox { half_width: f64 },
    /// Target-domain samples spread by `scale` about the domain mean and moved by `shift` along the diagonal.
    ShiftedGaussian { shift: f64, scale: f64 },
    /// Uniform directions at radii in `[radius, radius + width]` standard deviations from the domain mean.
    RadialShell { radius: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySpec {
    pub generator: AnomalyGenerator,
    /// Fraction of each test split that is anomalous.
    pub contamination: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub dim: usize,
    pub pretrain: Vec<DomainSpec>,
    pub target: DomainSpec,
    pub anomaly: AnomalySpec,
}

/// Two-component base mixture: modes split along `x0`, anisotropic elsewhere.
pub fn default_base(dim: usize) -> GaussianMixture {
    let mut means = vec![vec![0.0; dim], vec![0.0; dim]];
    means[0][0] = -2.0;
    if dim > 2 {
        means[0][2] = 0.75;
    }
    means[1][0] = 2.0;
    let mut cov = vec![0.0; dim * dim];
    for i in 0..dim {
        cov[i * dim + i] = match i {
            0 => 0.5,
            1 => 0.15,
            _ => 0.3 + 0.5 * ((i % 4) as f64),
        };
    }
    // mild correlation between neighbouring tail coordinates
    for i in 2..dim.saturating_sub(1) {
        let c = 0.3 * (cov[i * dim + i] * cov[(i + 1) * dim + i + 1]).sqrt();
        cov[i * dim + i + 1] = c;
        cov[(i + 1) * dim + i] = c;
    }
    GaussianMixture::new(vec![0.5, 0.5], means, vec![cov.clone(), cov]).expect("valid default base")
}

impl BenchmarkSpec {
    /// `k` pre-training domains rotated by 0°, 30°, 60°, … and shifted; the
    /// target is rotated by 90°, scaled and shifted further. Anomalies are
    /// uniform over the box `mean ± 2 std` of the target; test splits hold 1000
    /// normal and 1000 anomalous samples.
    pub fn default_for(dim: usize, k: usize) -> Self {
        let base = default_base(dim);
        let shift = |amount: f64| -> Vec<f64> {
            (0..dim).map(|i| amount * if i % 2 == 0 { 1.0 } else { -0.5 }).collect()
        };
        let pretrain = (0..k)
            .map(|i| DomainSpec {
                name: DomainId::new(format!("source{i}")),
                base: base.clone(),
                transform: AffineTransform::plane_rotation(dim, 30.0 * i as f64, 1.0 + 0.25 * i as f64, shift(i as f64)),
                n_train: 5000,
                n_test: 2000,
            })
            .collect();
        let target = DomainSpec {
            name: DomainId::from("target"),
            base,
            transform: AffineTransform::plane_rotation(dim, 90.0, 1.5, shift(3.0)),
            n_train: 5000,
            n_test: 2000,
        };
        Self {
            dim,
            pretrain,
            target,
            anomaly: AnomalySpec {
                generator: AnomalyGenerator::UniformBox { half_width: 2.0 },
                contamination: 0.5,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if self.pretrain.is_empty() {
            return Err(Error::InvalidConfig("at least one pre-training domain is required".into()));
        }
        let mut names: Vec<&DomainId> = self.pretrain.iter().map(|d| &d.name).collect();
        names.push(&self.target.name);
        names.sort();
        names.dedup();
        if names.len() != self.pretrain.len() + 1 {
            return Err(Error::InvalidConfig("domain names must be unique".into()));
        }
        for d in self.pretrain.iter().chain(std::iter::once(&self.target)) {
            d.validate(self.dim)?;
        }
        if !(0.0..=1.0).contains(&self.anomaly.contamination) {
            return Err(Error::InvalidConfig("contamination must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    /// Normal-only training data per pre-training domain.
    pub pretrain: BTreeMap<DomainId, Dataset>,
    pub target_id: DomainId,
    /// Normal-only target-domain data (adaptation and fine-tuning draw from here).
    pub target_train: Dataset,
    /// Labelled target-domain test split.
    pub target_test: Dataset,
}

impl Benchmark {
    /// Writes `pretrain_<id>.csv`, `target_train.csv`, `target_test.csv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (k, ds) in &self.pretrain {
            ds.save_csv(dir.join(format!("pretrain_{k}.csv")))?;
        }
        self.target_train.save_csv(dir.join("target_train.csv"))?;
        self.target_test.save_csv(dir.join("target_test.csv"))?;
        Ok(())
    }
}

/// Number of anomalies in a test split of size `n`.
pub fn anomaly_count(n: usize, contamination: f64) -> usize {
    ((n as f64) * contamination).round() as usize
}

fn anomalies<R: Rng + ?Sized>(
    spec: &BenchmarkSpec,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    let dim = spec.dim;
    let mut out = Vec::with_capacity(count * dim);
    let mean = spec.target.mean();
    let std: Vec<f64> = spec.target.variance().iter().map(|v| v.sqrt()).collect();
    match spec.anomaly.generator {
        AnomalyGenerator::UniformBox { half_width } => {
            for _ in 0..count {
                for i in 0..dim {
                    let r = half_width * std[i];
                    out.push(if r > 0.0 { rng.random_range(mean[i] - r..mean[i] + r) } else { mean[i] });
                }
            }
        }
        AnomalyGenerator::ShiftedGaussian { shift, scale } => {
            let step = shift / (dim as f64).sqrt();
            let base = spec.target.sample(count, rng);
            for row in base.rows() {
                for i in 0..dim {
                    out.push(mean[i] + scale * (row[i] - mean[i]) + step);
                }
            }
        }
        AnomalyGenerator::RadialShell { radius, width } => {
            for _ in 0..count {
                let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radius + width * rng.random::<f64>();
                for i in 0..dim {
                    out.push(mean[i] + r * std[i] * dir[i] / norm);
                }
            }
        }
    }
    out
}

/// Draws every split of the benchmark; the same seed and spec give identical data.
pub fn make_benchmark(seed: u64, spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut pretrain = BTreeMap::new();
    for d in &spec.pretrain {
        let mut rng = stage_rng(seed, &format!("synth/{}/train", d.name));
        pretrain.insert(d.name.clone(), d.sample(d.n_train, &mut rng).with_domain(&d.name));
    }
    let target = &spec.target;
    let mut rng = stage_rng(seed, "synth/target/train");
    let target_train = target.sample(target.n_train, &mut rng).with_domain(&target.name);

    let mut rng = stage_rng(seed, "synth/target/test");
    let n_anomaly = anomaly_count(target.n_test, spec.anomaly.contamination);
    let n_normal = target.n_test - n_anomaly;
    let normals = target.sample(n_normal, &mut rng);
    let mut values = normals.values().to_vec();
    values.extend(anomalies(spec, n_anomaly, &mut rng));
    let mut labels = vec![NORMAL; n_normal];
    labels.extend(std::iter::repeat_n(ANOMALY, n_anomaly));
    let ordered = Dataset::new(spec.dim, values)?.with_labels(labels)?;
    let mut order: Vec<usize> = (0..ordered.len()).collect();
    order.shuffle(&mut rng);
    let target_test = ordered.select(&order).with_domain(&target.name);

    Ok(Benchmark {
        pretrain,
        target_id: target.name.clone(),
        target_train,
        target_test,
    })
}

/// Two 2-D domains with the same mixture shape in different affine poses, for
/// translation demos.
pub fn translation_pair(n: usize) -> (DomainSpec, DomainSpec) {
    let base = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![-1.5, 0.0], vec![1.0, 0.5]],
        vec![vec![0.3, 0.1, 0.1, 0.4], vec![0.5, -0.2, -0.2, 0.3]],
    )
    .expect("valid mixture");
    let a = DomainSpec {
        name: DomainId::from("A"),
        base: base.clone(),
        transform: AffineTransform::identity(2),
        n_train: n,
        n_test: 0,
    };
    let mut to_b = AffineTransform::plane_rotation(2, 0.0, 1.0, vec![4.0, -3.0]);
    to_b.matrix = vec![2.0, 0.0, 0.0, 0.5];
    let b = DomainSpec {
        name: DomainId::from("B"),
        base,
        transform: to_b,
        n_train: n,
        n_test: 0,
    };
    (a, b)
}

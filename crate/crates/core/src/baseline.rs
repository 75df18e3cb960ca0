//! Autoencoder baseline: squared reconstruction error as the anomaly score.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{DomainId, FORMAT_VERSION};
use crate::optim::{clip_grad_norm, Optimizer};
use crate::scoring::AnomalyScorer;
use crate::training::{LossPoint, TrainConfig, TrainReport};

/// Fully connected layer, `y = W x + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect(),
            b: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for o in 0..self.outputs {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            y[o] = self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Encoder/decoder stack; every layer but the last is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    layers: Vec<Dense>,
    bottleneck: usize,
}

#[derive(Serialize, Deserialize)]
struct AeDocument {
    version: u32,
    model_type: String,
    bottleneck: usize,
    layers: Vec<Dense>,
}

/// Hidden sizes `D/6, D/12, D/6` (rounded, at least 1).
pub fn default_sizes(dim: usize) -> Vec<usize> {
    let scaled = |div: f64| ((dim as f64 / div).round() as usize).max(1);
    vec![dim, scaled(6.0), scaled(12.0), scaled(6.0), dim]
}

impl AeModel {
    /// `sizes` lists every width from input to output; the narrowest interior
    /// width is the bottleneck separating encoder and decoder.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig("autoencoder needs at least two positive widths".into()));
        }
        if sizes[0] != sizes[sizes.len() - 1] {
            return Err(Error::DimensionMismatch {
                expected: sizes[0],
                found: sizes[sizes.len() - 1],
            });
        }
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self::from_layers(layers)
    }

    pub fn with_default_architecture<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        Self::new(&default_sizes(dim), rng)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidConfig("autoencoder has no layers".into()))?;
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: w[0].outputs,
                    found: w[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.w.len() != l.inputs * l.outputs || l.b.len() != l.outputs {
                return Err(Error::InvalidConfig("dense layer parameter shape".into()));
            }
        }
        let last = &layers[layers.len() - 1];
        if first.inputs != last.outputs {
            return Err(Error::DimensionMismatch {
                expected: first.inputs,
                found: last.outputs,
            });
        }
        let bottleneck = (1..layers.len())
            .min_by_key(|&i| (layers[i].inputs, i))
            .unwrap_or(0);
        Ok(Self { layers, bottleneck })
    }

    pub fn dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Layers before the bottleneck.
    pub fn encoder(&self) -> &[Dense] {
        &self.layers[..self.bottleneck]
    }

    pub fn decoder(&self) -> &[Dense] {
        &self.layers[self.bottleneck..]
    }

    /// Activations after each layer (post-ReLU where applicable).
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; l.outputs];
            l.apply(&acts[i], &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.forward(x).pop().expect("non-empty"))
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("in the input sample"));
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&params[at..at + nw]);
            at += nw;
            l.b.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        assert_eq!(at, params.len(), "parameter vector length mismatch");
    }

    /// Mean squared reconstruction error of a batch and its gradient (flat, [`Self::flat_params`] order).
    pub fn backward(&self, batch: &Dataset) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: batch.dim(),
            });
        }
        let n = batch.len() as f64;
        let last = self.layers.len() - 1;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        let mut total = 0.0;
        for x in batch.rows() {
            let acts = self.forward(x);
            let out = &acts[acts.len() - 1];
            let mut g: Vec<f64> = out.iter().zip(x).map(|(y, v)| 2.0 * (y - v) / n).collect();
            total += out.iter().zip(x).map(|(y, v)| (y - v) * (y - v)).sum::<f64>();
            for i in (0..=last).rev() {
                let l = &self.layers[i];
                if i < last {
                    // ReLU on this layer's output
                    for (gv, a) in g.iter_mut().zip(&acts[i + 1]) {
                        if *a <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                let input = &acts[i];
                let (gw, gb) = &mut grads[i];
                let mut g_in = vec![0.0; l.inputs];
                for o in 0..l.outputs {
                    gb[o] += g[o];
                    for j in 0..l.inputs {
                        gw[o * l.inputs + j] += g[o] * input[j];
                        g_in[j] += l.w[o * l.inputs + j] * g[o];
                    }
                }
                g = g_in;
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        Ok((total / n, flat))
    }

    pub fn to_json(&self) -> Result<String> {
        crate::flow::to_precise_json(&AeDocument {
            version: FORMAT_VERSION,
            model_type: "ae".into(),
            bottleneck: self.bottleneck,
            layers: self.layers.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AeDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION || doc.model_type != "ae" {
            return Err(Error::Format(format!(
                "expected an autoencoder document version {FORMAT_VERSION}, found `{}` version {}",
                doc.model_type, doc.version
            )));
        }
        let mut m = Self::from_layers(doc.layers)?;
        if doc.bottleneck >= m.layers.len() {
            return Err(Error::Format("bottleneck index out of range".into()));
        }
        m.bottleneck = doc.bottleneck;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// `‖x − D(E(x))‖²`.
pub fn ae_score(ae: &AeModel, x: &[f64]) -> Result<f64> {
    let y = ae.reconstruct(x)?;
    Ok(y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
}

impl AnomalyScorer for AeModel {
    fn dim(&self) -> usize {
        AeModel::dim(self)
    }

    fn anomaly_score(&self, x: &[f64], _k: &DomainId) -> Result<f64> {
        ae_score(self, x)
    }

    fn is_density(&self) -> bool {
        false
    }
}

/// Minimizes the mean reconstruction error over the concatenation of all datasets.
///
/// The loss curve reports the pooled mean score under the domain id `pooled`.
pub fn ae_train(
    ae: &mut AeModel,
    datasets: &BTreeMap<DomainId, Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::InvalidConfig("no training datasets".into()));
    }
    let pooled = Dataset::concat(datasets.values())?;
    if pooled.dim() != ae.dim() {
        return Err(Error::DimensionMismatch {
            expected: ae.dim(),
            found: pooled.dim(),
        });
    }
    if pooled.len() < cfg.batch_size {
        return Err(Error::TooFewSamples {
            needed: cfg.batch_size,
            found: pooled.len(),
        });
    }
    pooled.check_finite()?;
    let start = Instant::now();
    let pooled_id = DomainId::from("pooled");
    let mut report = TrainReport::default();
    let mean_score = |ae: &AeModel| -> Result<f64> {
        let total: f64 = pooled.rows().map(|x| ae_score(ae, x)).sum::<Result<f64>>()?;
        Ok(total / pooled.len() as f64)
    };
    report.loss_curve.push(LossPoint {
        epoch: 0,
        domain: pooled_id.clone(),
        nll: mean_score(ae)?,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ae.flat_params();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = pooled.select(chunk);
            let (loss, mut grads) = ae.backward(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(&mut params, &grads);
            ae.set_flat_params(&params);
            report.steps += 1;
        }
        report.loss_curve.push(LossPoint {
            epoch,
            domain: pooled_id.clone(),
            nll: mean_score(ae)?,
        });
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

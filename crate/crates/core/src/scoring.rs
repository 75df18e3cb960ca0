//! Anomaly scores, thresholding, and ROC/AUROC evaluation.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ANOMALY, NORMAL};
use crate::error::{Error, Result};
use crate::flow::{DomainId, FlowModel};

/// Anything that assigns a higher score to more anomalous samples.
pub trait AnomalyScorer {
    fn dim(&self) -> usize;

    fn anomaly_score(&self, x: &[f64], k: &DomainId) -> Result<f64>;

    /// Whether the score is a negative log-likelihood (so mean NLL is meaningful).
    fn is_density(&self) -> bool;
}

impl AnomalyScorer for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn anomaly_score(&self, x: &[f64], k: &DomainId) -> Result<f64> {
        anomaly_score(self, x, k)
    }

    fn is_density(&self) -> bool {
        true
    }
}

/// Negative log-likelihood of `x` under domain `k`.
pub fn anomaly_score(model: &FlowModel, x: &[f64], k: &DomainId) -> Result<f64> {
    Ok(-model.log_likelihood(x, k)?)
}

/// `1` (anomaly) when `score ≥ phi`, else `0` (normal).
pub fn classify(score: f64, phi: f64) -> u8 {
    if score >= phi {
        ANOMALY
    } else {
        NORMAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: Option<u8>,
    pub domain: DomainId,
}

pub fn score_dataset<S: AnomalyScorer + ?Sized>(
    scorer: &S,
    data: &Dataset,
    k: &DomainId,
) -> Result<Vec<ScoredSample>> {
    if data.dim() != scorer.dim() {
        return Err(Error::DimensionMismatch {
            expected: scorer.dim(),
            found: data.dim(),
        });
    }
    data.rows()
        .enumerate()
        .map(|(i, x)| {
            let score = scorer.anomaly_score(x, k)?;
            if !score.is_finite() {
                return Err(Error::non_finite(format!("score of sample {i}")));
            }
            Ok(ScoredSample {
                score,
                label: data.labels().map(|l| l[i]),
                domain: k.clone(),
            })
        })
        .collect()
}

/// Writes `sample_index,score,label` rows; the label column is empty for unlabelled samples.
pub fn write_scores_csv<W: std::io::Write>(samples: &[ScoredSample], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["sample_index", "score", "label"])?;
    for (i, s) in samples.iter().enumerate() {
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([i.to_string(), s.score.to_string(), label])?;
    }
    w.flush()?;
    Ok(())
}

fn split_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::non_finite(format!("score of sample {i}")));
    }
    let positives = labels.iter().filter(|&&l| l == ANOMALY).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    Ok((positives, negatives))
}

/// ROC points `(FPR, TPR)` over every distinct threshold, from `(0,0)` to `(1,1)`.
///
/// Tied scores move both coordinates in a single step.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (positives, negatives) = split_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&s) == Ordering::Equal {
            if labels[order[i]] == ANOMALY {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn area_under(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// AUROC of raw scores and labels; ties count one half.
pub fn auroc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(area_under(&roc_curve(scores, labels)?))
}

/// AUROC of scored samples; every sample must carry a label.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let labels: Vec<u8> = samples
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::InvalidConfig("unlabelled sample".into())))
        .collect::<Result<_>>()?;
    auroc_scores(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean NLL over normal samples; absent for scorers without a density.
    pub mean_nll: Option<f64>,
    /// Absent when the test set has a single class.
    pub auroc: Option<f64>,
    pub roc_points: Vec<(f64, f64)>,
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub seconds: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Scores a (possibly labelled) test set under domain `k`.
///
/// Unlabelled data is treated as normal; with a single class only the NLL is
/// reported, and a scorer without a density then has nothing to report.
pub fn evaluate<S: AnomalyScorer + ?Sized>(scorer: &S, test: &Dataset, k: &DomainId) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let start = Instant::now();
    let scored = score_dataset(scorer, test, k)?;
    let labels: Vec<u8> = scored.iter().map(|s| s.label.unwrap_or(NORMAL)).collect();
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let n_anomaly = labels.iter().filter(|&&l| l == ANOMALY).count();
    let n_normal = labels.len() - n_anomaly;
    let mean_nll = (scorer.is_density() && n_normal > 0).then(|| {
        scores
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == NORMAL)
            .map(|(s, _)| s)
            .sum::<f64>()
            / n_normal as f64
    });
    let (auroc, roc_points) = if n_normal > 0 && n_anomaly > 0 {
        let pts = roc_curve(&scores, &labels)?;
        (Some(area_under(&pts)), pts)
    } else if scorer.is_density() {
        (None, Vec::new())
    } else {
        return Err(Error::SingleClass);
    };
    Ok(EvalReport {
        mean_nll,
        auroc,
        roc_points,
        n_normal,
        n_anomaly,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::DomainStats;

    fn pairwise(normals: &[f64], anomalies: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in anomalies {
            for n in normals {
                acc += match a.partial_cmp(n).unwrap() {
                    Ordering::Greater => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Less => 0.0,
                };
            }
        }
        acc / (normals.len() * anomalies.len()) as f64
    }

    fn auc(normals: &[f64], anomalies: &[f64]) -> f64 {
        let scores: Vec<f64> = normals.iter().chain(anomalies).copied().collect();
        let labels: Vec<u8> = normals.iter().map(|_| 0).chain(anomalies.iter().map(|_| 1)).collect();
        auroc_scores(&scores, &labels).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auc(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(auc(&[1.0, 3.0], &[2.0, 4.0]), 0.75);
        assert_eq!(pairwise(&[1.0, 3.0], &[2.0, 4.0]), 0.75);
        assert_eq!(auc(&[1.0], &[1.0]), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(auroc_scores(&[1.0, 2.0], &[0, 0]), Err(Error::SingleClass)));
    }

    #[test]
    fn classify_boundary_is_anomalous() {
        assert_eq!(classify(5.0, 3.0), 1);
        assert_eq!(classify(2.0, 3.0), 0);
        assert_eq!(classify(3.0, 3.0), 1);
    }

    #[test]
    fn identity_flow_scores() {
        let mut m = FlowModel::new(2, 0.2, vec![]).unwrap();
        m.set_domain("a".into(), DomainStats::default()).unwrap();
        let s = anomaly_score(&m, &[0.0, 0.0], &"a".into()).unwrap();
        assert!((s - 1.8378770664093453).abs() < 1e-12);
        let mut m1 = FlowModel::new(1, 0.2, vec![]).unwrap();
        m1.set_domain("a".into(), DomainStats::default()).unwrap();
        let s = anomaly_score(&m1, &[3.0], &"a".into()).unwrap();
        assert!((s - 5.418938533204673).abs() < 1e-12);
    }

    #[test]
    fn evaluate_radius_separation() {
        let mut m = FlowModel::new(2, 0.2, vec![]).unwrap();
        m.set_domain("a".into(), DomainStats::default()).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let t = i as f64 * std::f64::consts::FRAC_PI_4;
            rows.push(vec![0.0, 0.0]);
            labels.push(0);
            rows.push(vec![5.0 * t.cos(), 5.0 * t.sin()]);
            labels.push(1);
        }
        let test = Dataset::from_rows(2, &rows).unwrap().with_labels(labels).unwrap();
        let r = evaluate(&m, &test, &"a".into()).unwrap();
        assert_eq!(r.auroc, Some(1.0));
        assert_eq!(r.roc_points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.roc_points.last(), Some(&(1.0, 1.0)));
        assert!((r.mean_nll.unwrap() - 1.8378770664093453).abs() < 1e-12);
        assert_eq!((r.n_normal, r.n_anomaly), (8, 8));
    }

    #[test]
    fn evaluate_empty_and_normal_only() {
        let mut m = FlowModel::new(1, 0.2, vec![]).unwrap();
        m.set_domain("a".into(), DomainStats::default()).unwrap();
        let empty = Dataset::new(1, vec![]).unwrap();
        assert!(matches!(evaluate(&m, &empty, &"a".into()), Err(Error::EmptyBatch)));
        let normal = Dataset::new(1, vec![0.0, 1.0]).unwrap();
        let r = evaluate(&m, &normal, &"a".into()).unwrap();
        assert!(r.auroc.is_none());
        assert!(r.mean_nll.is_some());
    }
}

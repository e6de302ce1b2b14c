//! Baseline losses: softmax cross-entropy over a linear classifier, center
//! loss and squared-Euclidean triplet loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CenterlineBank, LabeledBatch};
use crate::error::{Error, Result};
use crate::vector::{axpy, dot_unchecked, FeatureVector};

/// Linear classification layer `logits = W·f + b` with `W` of shape `K×n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let classes = weights.len();
        if classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "classifier needs at least 2 classes, got {classes}"
            )));
        }
        if bias.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: bias.len(),
            });
        }
        let dim = weights[0].len();
        for row in &weights {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        Ok(Self { weights, bias })
    }

    pub fn gaussian<R: Rng + ?Sized>(classes: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let weights = (0..classes)
            .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
            .collect();
        Self {
            weights,
            bias: vec![0.0; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot_unchecked(w, f) + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub feature_grads: Vec<FeatureVector>,
    pub weight_grads: Vec<Vec<f64>>,
    pub bias_grads: Vec<f64>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Mean cross-entropy of a linear softmax classifier, with gradients for the
/// features and the classifier parameters.
pub fn softmax_ce(batch: &LabeledBatch, classifier: &LinearClassifier) -> Result<SoftmaxOutput> {
    let classes = classifier.num_classes();
    batch.check_labels(classes)?;
    if batch.dim() != classifier.dim() {
        return Err(Error::DimensionMismatch {
            expected: classifier.dim(),
            got: batch.dim(),
        });
    }
    let m = batch.len();
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut feature_grads = Vec::with_capacity(m);
    let mut weight_grads = vec![vec![0.0; classifier.dim()]; classes];
    let mut bias_grads = vec![0.0; classes];

    for (f, y) in batch.iter() {
        let log_p = log_softmax(&classifier.logits(f));
        loss -= log_p[y];
        let mut gf = vec![0.0; f.len()];
        for (k, lp) in log_p.iter().enumerate() {
            // d(−log p_y)/dz_k = p_k − [k = y]
            let dz = (lp.exp() - if k == y { 1.0 } else { 0.0 }) * inv_m;
            axpy(dz, &classifier.weights[k], &mut gf);
            axpy(dz, f, &mut weight_grads[k]);
            bias_grads[k] += dz;
        }
        feature_grads.push(gf);
    }

    Ok(SoftmaxOutput {
        loss: loss * inv_m,
        feature_grads,
        weight_grads,
        bias_grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterOutput {
    /// `½ Σ_i ‖f_i − c_{y_i}‖²`
    pub loss: f64,
    /// `f_i − c_{y_i}`
    pub feature_grads: Vec<FeatureVector>,
    /// `Σ_{i: y_i = k} (c_k − f_i) / (1 + n_k)`
    pub center_grads: Vec<FeatureVector>,
}

/// Center loss against point centers `centers`.
///
/// The center gradient is the averaged update of the original center-loss
/// formulation rather than the raw derivative, so centers move at a rate
/// independent of how many of their samples land in a batch.
pub fn center_loss(batch: &LabeledBatch, centers: &CenterlineBank) -> Result<CenterOutput> {
    batch.check_against(centers)?;
    let mut loss = 0.0;
    let mut feature_grads = Vec::with_capacity(batch.len());
    let mut center_grads = vec![vec![0.0; centers.dim()]; centers.num_classes()];
    let mut counts = vec![0usize; centers.num_classes()];
    for (f, y) in batch.iter() {
        let diff: Vec<f64> = f.iter().zip(centers.center(y)).map(|(a, c)| a - c).collect();
        loss += 0.5 * dot_unchecked(&diff, &diff);
        axpy(-1.0, &diff, &mut center_grads[y]);
        counts[y] += 1;
        feature_grads.push(diff);
    }
    for (g, n) in center_grads.iter_mut().zip(counts) {
        let inv = 1.0 / (1.0 + n as f64);
        g.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(CenterOutput {
        loss,
        feature_grads,
        center_grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_anchor: FeatureVector,
    pub grad_positive: FeatureVector,
    pub grad_negative: FeatureVector,
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)` with its subgradients (zero when the
/// hinge is inactive).
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<TripletOutput> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "triplet margin must be positive, got {margin}"
        )));
    }
    let dim = anchor.len();
    for v in [positive, negative] {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    let ap: Vec<f64> = anchor.iter().zip(positive).map(|(a, p)| a - p).collect();
    let an: Vec<f64> = anchor.iter().zip(negative).map(|(a, n)| a - n).collect();
    let raw = dot_unchecked(&ap, &ap) - dot_unchecked(&an, &an) + margin;
    if raw <= 0.0 {
        return Ok(TripletOutput {
            loss: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        });
    }
    // d/da = 2(a−p) − 2(a−n) = 2(n−p)
    let grad_anchor = ap.iter().zip(&an).map(|(x, y)| 2.0 * (x - y)).collect();
    let grad_positive = ap.iter().map(|x| -2.0 * x).collect();
    let grad_negative = an.iter().map(|x| 2.0 * x).collect();
    Ok(TripletOutput {
        loss: raw,
        grad_anchor,
        grad_positive,
        grad_negative,
    })
}

/// Batch-hard triplet term: every anchor with at least one positive and one
/// negative in the batch is paired with its farthest positive and closest
/// negative. Returns the mean hinge over those anchors and per-feature
/// gradients of that mean.
pub fn batch_hard_triplet(batch: &LabeledBatch, margin: f64) -> Result<(f64, Vec<FeatureVector>)> {
    let m = batch.len();
    let sq = |i: usize, j: usize| -> f64 {
        batch
            .feature(i)
            .iter()
            .zip(batch.feature(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut triplets = Vec::new();
    for a in 0..m {
        let ya = batch.label(a);
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in (0..m).filter(|&j| j != a) {
            let dist = sq(a, j);
            if batch.label(j) == ya {
                if hardest_pos.is_none_or(|(_, best)| dist > best) {
                    hardest_pos = Some((j, dist));
                }
            } else if hardest_neg.is_none_or(|(_, best)| dist < best) {
                hardest_neg = Some((j, dist));
            }
        }
        if let (Some((p, _)), Some((n, _))) = (hardest_pos, hardest_neg) {
            triplets.push((a, p, n));
        }
    }
    let mut grads = vec![vec![0.0; batch.dim()]; m];
    if triplets.is_empty() {
        return Ok((0.0, grads));
    }
    let inv = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    for (a, p, n) in triplets {
        let out = triplet_loss(batch.feature(a), batch.feature(p), batch.feature(n), margin)?;
        loss += out.loss * inv;
        axpy(inv, &out.grad_anchor, &mut grads[a]);
        axpy(inv, &out.grad_positive, &mut grads[p]);
        axpy(inv, &out.grad_negative, &mut grads[n]);
    }
    Ok((loss, grads))
}

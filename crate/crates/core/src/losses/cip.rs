//! Cluster and Ortho terms of the collaborative inner-product loss.
//!
//! The feature and centerline gradients here are the bounded surrogates used
//! for training: the Cluster inner product is clipped at zero before the
//! reciprocal, and the Ortho centerline gradient is averaged over violators.
//! The unclipped Cluster forms are kept for diagnostics only.

use super::{CenterlineBank, LabeledBatch, LossConfig, OrthoVariant};
use crate::error::{Error, Result};
use crate::vector::{axpy, dot, dot_unchecked, scaled, FeatureVector};

/// Half-width of the band around `fᵀc = −d` where the unclipped Cluster
/// gradient is reported as singular.
pub const SINGULARITY_GUARD: f64 = 1e-9;

fn check_d(d: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "stability constant d must be positive and finite, got {d}"
        )));
    }
    Ok(())
}

/// `Σ_i 1 / ((f_iᵀc_{y_i})₊ + d)`.
///
/// The forward pass clips the inner product the same way the surrogate
/// gradient does, so the reported value is the antiderivative of what
/// training actually follows. It lies in `(0, M/d]`.
pub fn cluster_forward(batch: &LabeledBatch, bank: &CenterlineBank, d: f64) -> Result<f64> {
    check_d(d)?;
    batch.check_against(bank)?;
    Ok(batch
        .iter()
        .map(|(f, y)| 1.0 / (dot_unchecked(f, bank.center(y)).max(0.0) + d))
        .sum())
}

/// `Σ_i 1 / (f_iᵀc_{y_i} + d)` without clipping. Can be negative or blow up
/// as an inner product approaches `−d`.
pub fn cluster_forward_unclipped(
    batch: &LabeledBatch,
    bank: &CenterlineBank,
    d: f64,
) -> Result<f64> {
    check_d(d)?;
    batch.check_against(bank)?;
    Ok(batch
        .iter()
        .map(|(f, y)| 1.0 / (dot_unchecked(f, bank.center(y)) + d))
        .sum())
}

/// `Σ_i Σ_{k≠y_i} max(f_iᵀc_k, 0)`.
pub fn ortho_forward(batch: &LabeledBatch, bank: &CenterlineBank) -> Result<f64> {
    batch.check_against(bank)?;
    let mut total = 0.0;
    for (f, y) in batch.iter() {
        for (k, c) in bank.centers().iter().enumerate() {
            if k != y {
                total += dot_unchecked(f, c).max(0.0);
            }
        }
    }
    Ok(total)
}

/// `Σ_i Σ_{j: y_j≠y_i} max(f_iᵀf_j, 0)` over ordered pairs, so every
/// cross-class pair is counted twice.
pub fn ortho_batch_forward(batch: &LabeledBatch) -> f64 {
    let mut total = 0.0;
    for (i, (fi, yi)) in batch.iter().enumerate() {
        for (j, (fj, yj)) in batch.iter().enumerate() {
            if i != j && yi != yj {
                total += dot_unchecked(fi, fj).max(0.0);
            }
        }
    }
    total
}

/// `L_cluster + λ·L_ortho`, with the Ortho term chosen by `cfg.ortho_variant`.
pub fn cip_forward(batch: &LabeledBatch, bank: &CenterlineBank, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let cluster = cluster_forward(batch, bank, cfg.d)?;
    let ortho = match cfg.ortho_variant {
        OrthoVariant::Centerline => ortho_forward(batch, bank)?,
        OrthoVariant::Batch => ortho_batch_forward(batch),
    };
    Ok(cluster + cfg.lambda * ortho)
}

/// Surrogate Cluster gradient for one feature: `−c / ((fᵀc)₊ + d)²`.
pub fn cluster_grad_feature(f: &[f64], c: &[f64], d: f64) -> Result<FeatureVector> {
    let s = dot(f, c)?.max(0.0) + d;
    Ok(scaled(-1.0 / (s * s), c))
}

/// The true derivative of the unclipped Cluster term, `−c / (fᵀc + d)²`.
///
/// Never used for training. Errors inside the guard band around `fᵀc = −d`.
pub fn cluster_grad_feature_origin(f: &[f64], c: &[f64], d: f64) -> Result<FeatureVector> {
    let s = dot(f, c)? + d;
    if s.abs() < SINGULARITY_GUARD {
        return Err(Error::Singularity { gap: s.abs() });
    }
    Ok(scaled(-1.0 / (s * s), c))
}

/// Ortho gradient for one feature: `Σ_{k≠y} [fᵀc_k > 0]·c_k`.
pub fn ortho_grad_feature(
    f: &[f64],
    bank: &CenterlineBank,
    own_label: usize,
) -> Result<FeatureVector> {
    bank.check_label(own_label)?;
    bank.check_dim(f.len())?;
    let mut grad = vec![0.0; f.len()];
    for (k, c) in bank.centers().iter().enumerate() {
        if k != own_label && dot_unchecked(f, c) > 0.0 {
            axpy(1.0, c, &mut grad);
        }
    }
    Ok(grad)
}

/// Surrogate Cluster gradient for centerline `class_index`:
/// `Σ_j [y_j = class] · (−f_j / ((f_jᵀc)₊ + d)²)`.
pub fn cluster_grad_centerline(
    batch: &LabeledBatch,
    bank: &CenterlineBank,
    class_index: usize,
    d: f64,
) -> Result<FeatureVector> {
    check_d(d)?;
    bank.check_label(class_index)?;
    batch.check_against(bank)?;
    let c = bank.center(class_index);
    let mut grad = vec![0.0; bank.dim()];
    for (f, y) in batch.iter() {
        if y == class_index {
            let s = dot_unchecked(f, c).max(0.0) + d;
            axpy(-1.0 / (s * s), f, &mut grad);
        }
    }
    Ok(grad)
}

/// Averaged Ortho gradient for centerline `class_index`: the sum of
/// other-class features with a positive inner product, divided by one plus
/// their count.
pub fn ortho_grad_centerline(
    batch: &LabeledBatch,
    bank: &CenterlineBank,
    class_index: usize,
) -> Result<FeatureVector> {
    bank.check_label(class_index)?;
    batch.check_against(bank)?;
    let c = bank.center(class_index);
    let mut sum = vec![0.0; bank.dim()];
    let mut violators = 0usize;
    for (f, y) in batch.iter() {
        if y != class_index && dot_unchecked(f, c) > 0.0 {
            axpy(1.0, f, &mut sum);
            violators += 1;
        }
    }
    let inv = 1.0 / (1.0 + violators as f64);
    sum.iter_mut().for_each(|v| *v *= inv);
    Ok(sum)
}

/// Gradient of the batch Ortho term w.r.t. feature `i`:
/// `2·Σ_{j: y_j≠y_i} [f_iᵀf_j > 0]·f_j`.
///
/// The factor 2 comes from `f_i` appearing on both sides of the ordered-pair
/// sum.
pub fn ortho_batch_grad_feature(batch: &LabeledBatch, i: usize) -> Result<FeatureVector> {
    if i >= batch.len() {
        return Err(Error::InvalidConfig(format!(
            "feature index {i} outside batch of {}",
            batch.len()
        )));
    }
    let fi = batch.feature(i);
    let yi = batch.label(i);
    let mut grad = vec![0.0; batch.dim()];
    for (j, (fj, yj)) in batch.iter().enumerate() {
        if j != i && yj != yi && dot_unchecked(fi, fj) > 0.0 {
            axpy(2.0, fj, &mut grad);
        }
    }
    Ok(grad)
}

/// Gradient of `wᵀf / ‖w‖` w.r.t. `w`: `f/‖w‖ − (wᵀf)·w/‖w‖³`.
///
/// Its magnitude grows as `1/‖w‖`, unlike the plain inner-product gradient
/// `f` which does not depend on `w` at all.
pub fn normalized_weight_gradient(w: &[f64], f: &[f64]) -> Result<FeatureVector> {
    let wf = dot(w, f)?;
    let nw = crate::vector::norm(w);
    if nw == 0.0 {
        return Err(Error::ZeroNorm("normalized weight gradient needs w != 0"));
    }
    let nw3 = nw * nw * nw;
    Ok(f.iter()
        .zip(w)
        .map(|(fi, wi)| fi / nw - wf * wi / nw3)
        .collect())
}

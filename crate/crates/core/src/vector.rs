//! Dense vector primitives shared by the losses, the encoder and evaluation.
//!
//! Everything works on `&[f64]` slices. Reductions accumulate left to right so
//! results are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An embedding produced by the encoder.
pub type FeatureVector = Vec<f64>;

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Inner product `Σ a[t]·b[t]`.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(dot_unchecked(a, b))
}

/// Inner product without the length check; callers guarantee equal lengths.
#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// Cosine similarity `aᵀb / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine of a zero vector is undefined"));
    }
    Ok((dot_unchecked(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// `y += alpha·x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Mean of a shape's per-view features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDescriptor {
    pub components: Vec<f64>,
    pub source_view_count: usize,
}

/// Component-wise mean of `views`.
pub fn mean_pool<V: AsRef<[f64]>>(views: &[V]) -> Result<ShapeDescriptor> {
    let first = views
        .first()
        .ok_or(Error::Empty("mean_pool needs at least one view"))?
        .as_ref();
    let mut sum = vec![0.0; first.len()];
    for v in views {
        let v = v.as_ref();
        check_dims(first, v)?;
        axpy(1.0, v, &mut sum);
    }
    let count = views.len();
    let inv = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(ShapeDescriptor {
        components: sum,
        source_view_count: count,
    })
}

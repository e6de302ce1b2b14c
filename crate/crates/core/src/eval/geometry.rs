//! Embedding-geometry summaries: how orthogonal the centerlines are and how
//! tightly each class lines up with its own centerline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::CenterlineBank;
use crate::vector::{dot_unchecked, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometry {
    pub class: usize,
    pub count: usize,
    /// Features whose norm is zero; they are left out of the cosine stats.
    pub zero_norm: usize,
    pub mean_own_cosine: f64,
    pub min_own_cosine: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub norm_min: f64,
    pub norm_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// `K×K` cosines between centerlines (0 where a centerline is zero).
    pub centerline_cosines: Vec<Vec<f64>>,
    pub max_centerline_cosine: f64,
    pub classes: Vec<ClassGeometry>,
    /// Mean over all nonzero features of the cosine to their own centerline.
    pub mean_own_cosine: f64,
    /// Largest `fᵀc_k` over features and centerlines of other classes.
    pub max_cross_inner_product: f64,
}

fn cosine_or_zero(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot_unchecked(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Largest off-diagonal entry of the centerline cosine matrix.
pub fn max_pairwise_cosine(bank: &CenterlineBank) -> f64 {
    let norms: Vec<f64> = bank.centers().iter().map(|c| norm(c)).collect();
    let mut max = f64::NEG_INFINITY;
    for i in 0..bank.num_classes() {
        for j in 0..i {
            max = max.max(cosine_or_zero(bank.center(i), norms[i], bank.center(j), norms[j]));
        }
    }
    max
}

pub fn geometry_report<V: AsRef<[f64]>>(
    features: &[V],
    labels: &[usize],
    bank: &CenterlineBank,
) -> Result<GeometryReport> {
    if features.is_empty() {
        return Err(Error::Empty("geometry report needs features"));
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let k = bank.num_classes();
    for (f, &y) in features.iter().zip(labels) {
        bank.check_dim(f.as_ref().len())?;
        bank.check_label(y)?;
    }
    let center_norms: Vec<f64> = bank.centers().iter().map(|c| norm(c)).collect();
    let centerline_cosines: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i == j && center_norms[i] > 0.0 {
                        1.0
                    } else {
                        cosine_or_zero(bank.center(i), center_norms[i], bank.center(j), center_norms[j])
                    }
                })
                .collect()
        })
        .collect();

    let mut cos_sum = vec![0.0; k];
    let mut cos_min = vec![f64::INFINITY; k];
    let mut norms: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut zero = vec![0usize; k];
    let mut max_cross = f64::NEG_INFINITY;
    let mut all_cos = 0.0;
    let mut all_count = 0usize;
    for (f, &y) in features.iter().zip(labels) {
        let f = f.as_ref();
        let nf = norm(f);
        norms[y].push(nf);
        if nf == 0.0 {
            zero[y] += 1;
        } else {
            let c = cosine_or_zero(f, nf, bank.center(y), center_norms[y]);
            cos_sum[y] += c;
            cos_min[y] = cos_min[y].min(c);
            all_cos += c;
            all_count += 1;
        }
        for (j, c) in bank.centers().iter().enumerate() {
            if j != y {
                max_cross = max_cross.max(dot_unchecked(f, c));
            }
        }
    }

    let classes = (0..k)
        .map(|class| {
            let ns = &norms[class];
            let count = ns.len();
            let cos_count = count - zero[class];
            let (norm_mean, norm_std, norm_min, norm_max) = if count == 0 {
                (0.0, 0.0, 0.0, 0.0)
            } else {
                let mean = ns.iter().sum::<f64>() / count as f64;
                let var = ns.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
                let min = ns.iter().copied().fold(f64::INFINITY, f64::min);
                let max = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (mean, var.sqrt(), min, max)
            };
            ClassGeometry {
                class,
                count,
                zero_norm: zero[class],
                mean_own_cosine: if cos_count == 0 {
                    0.0
                } else {
                    cos_sum[class] / cos_count as f64
                },
                min_own_cosine: if cos_count == 0 { 0.0 } else { cos_min[class] },
                norm_mean,
                norm_std,
                norm_min,
                norm_max,
            }
        })
        .collect();

    Ok(GeometryReport {
        max_centerline_cosine: max_pairwise_cosine(bank),
        centerline_cosines,
        classes,
        mean_own_cosine: if all_count == 0 {
            0.0
        } else {
            all_cos / all_count as f64
        },
        max_cross_inner_product: if max_cross.is_finite() { max_cross } else { 0.0 },
    })
}

impl GeometryReport {
    /// The centerline cosine matrix as CSV with a `class` column and one
    /// column per class (1-based names).
    pub fn cosine_matrix_csv(&self) -> String {
        let k = self.centerline_cosines.len();
        let mut out = String::from("class");
        for j in 0..k {
            let _ = write!(out, ",c{}", j + 1);
        }
        out.push('\n');
        for (i, row) in self.centerline_cosines.iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Per-class statistics as CSV (1-based class labels).
    pub fn class_stats_csv(&self) -> String {
        let mut out = String::from(
            "class,count,zero_norm,mean_own_cosine,min_own_cosine,norm_mean,norm_std,norm_min,norm_max\n",
        );
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.class + 1,
                c.count,
                c.zero_norm,
                c.mean_own_cosine,
                c.min_own_cosine,
                c.norm_mean,
                c.norm_std,
                c.norm_min,
                c.norm_max
            );
        }
        out
    }
}

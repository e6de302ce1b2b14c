//! Per-ranking retrieval metrics over binary relevance flags.
//!
//! A ranking is given as `relevance[r]` for rank `r + 1`. The ranking is
//! assumed to cover the whole gallery, so the number of relevant items is
//! the number of `true` flags.

use serde::{Deserialize, Serialize};

fn relevant_count(relevance: &[bool]) -> usize {
    relevance.iter().filter(|&&r| r).count()
}

/// Mean of precision at the rank of every relevant item. `None` when the
/// ranking contains no relevant item.
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let total = relevant_count(relevance);
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Trapezoidal area under the precision–recall curve sampled after every
/// rank, starting from the anchor `(recall 0, precision 1)`. `None` when the
/// ranking contains no relevant item.
pub fn pr_auc(relevance: &[bool]) -> Option<f64> {
    let total = relevant_count(relevance);
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let (mut prev_recall, mut prev_precision) = (0.0, 1.0);
    let mut area = 0.0;
    for (r, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
        }
        let recall = hits as f64 / total as f64;
        let precision = hits as f64 / (r + 1) as f64;
        area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
    }
    Some(area)
}

/// Binary-gain NDCG over the first `cutoff` ranks, gain `1/log₂(rank + 1)`.
/// Zero when nothing is relevant.
pub fn ndcg(relevance: &[bool], cutoff: usize) -> f64 {
    let total = relevant_count(relevance);
    if total == 0 || cutoff == 0 {
        return 0.0;
    }
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = relevance
        .iter()
        .take(cutoff)
        .enumerate()
        .filter(|(_, &rel)| rel)
        .map(|(r, _)| discount(r))
        .sum();
    let ideal: f64 = (0..total.min(cutoff)).map(discount).sum();
    dcg / ideal
}

/// Harmonic mean of precision@cutoff and recall@cutoff; 0 when both vanish.
pub fn f1_at(relevance: &[bool], cutoff: usize) -> f64 {
    let total = relevant_count(relevance);
    if total == 0 || cutoff == 0 {
        return 0.0;
    }
    let hits = relevance.iter().take(cutoff).filter(|&&r| r).count();
    if hits == 0 {
        return 0.0;
    }
    let precision = hits as f64 / cutoff as f64;
    let recall = hits as f64 / total as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Cutoffs for the rank-limited metrics. `None` picks the defaults:
/// the number of relevant items (capped at the gallery size) for F1 and the
/// full ranking for NDCG.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub f1_cutoff: Option<usize>,
    pub ndcg_cutoff: Option<usize>,
}

/// Metrics of one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: usize,
    pub label: usize,
    pub average_precision: f64,
    pub pr_auc: f64,
    pub ndcg: f64,
    pub f1: f64,
}

/// All four metrics for one ranking, or `None` when it has no relevant item.
pub fn query_metrics(
    query: usize,
    label: usize,
    relevance: &[bool],
    options: EvalOptions,
) -> Option<QueryMetrics> {
    let ap = average_precision(relevance)?;
    let total = relevant_count(relevance);
    let f1_cut = options
        .f1_cutoff
        .unwrap_or_else(|| total.min(relevance.len()));
    let ndcg_cut = options.ndcg_cutoff.unwrap_or(relevance.len());
    Some(QueryMetrics {
        query,
        label,
        average_precision: ap,
        pr_auc: pr_auc(relevance)?,
        ndcg: ndcg(relevance, ndcg_cut),
        f1: f1_at(relevance, f1_cut),
    })
}

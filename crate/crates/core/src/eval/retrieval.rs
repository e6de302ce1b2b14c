//! Leave-one-out cosine-distance retrieval and metric aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{query_metrics, EvalOptions, QueryMetrics};
use crate::error::{Error, Result};
use crate::vector::{dot_unchecked, norm};

/// Gallery order for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query: usize,
    pub query_label: usize,
    /// Gallery indices in ascending cosine distance, ties by index.
    pub order: Vec<usize>,
    pub distances: Vec<f64>,
    /// `relevant[r]` is true when `order[r]` shares the query's label.
    pub relevant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub rankings: Vec<Ranking>,
    pub labels: Vec<usize>,
    /// Items left out because their descriptor has zero norm.
    pub excluded: Vec<usize>,
}

/// Ranks every descriptor against all others by cosine distance.
///
/// Zero-norm descriptors have no defined direction; they are neither queried
/// nor retrieved and are listed in `excluded`.
pub fn rank<V: AsRef<[f64]>>(descriptors: &[V], labels: &[usize]) -> Result<RetrievalRun> {
    if descriptors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: descriptors.len(),
            got: labels.len(),
        });
    }
    if descriptors.is_empty() {
        return Err(Error::Empty("no descriptors to rank"));
    }
    let dim = descriptors[0].as_ref().len();
    let mut unit: Vec<Option<Vec<f64>>> = Vec::with_capacity(descriptors.len());
    let mut excluded = Vec::new();
    for (i, d) in descriptors.iter().enumerate() {
        let d = d.as_ref();
        if d.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: d.len(),
            });
        }
        let n = norm(d);
        if n == 0.0 || !n.is_finite() {
            excluded.push(i);
            unit.push(None);
        } else {
            unit.push(Some(d.iter().map(|x| x / n).collect()));
        }
    }

    let mut rankings = Vec::with_capacity(descriptors.len() - excluded.len());
    for (q, uq) in unit.iter().enumerate() {
        let Some(uq) = uq else { continue };
        let mut scored: Vec<(usize, f64)> = unit
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != q)
            .filter_map(|(g, ug)| ug.as_ref().map(|ug| (g, 1.0 - dot_unchecked(uq, ug))))
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        rankings.push(Ranking {
            query: q,
            query_label: labels[q],
            relevant: scored.iter().map(|&(g, _)| labels[g] == labels[q]).collect(),
            order: scored.iter().map(|&(g, _)| g).collect(),
            distances: scored.iter().map(|&(_, d)| d).collect(),
        });
    }
    Ok(RetrievalRun {
        rankings,
        labels: labels.to_vec(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over queries.
    Micro,
    /// Mean over classes of the per-class query means.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub pr_auc: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub aggregation: Aggregation,
    pub queries: usize,
    /// Queries without any relevant gallery item.
    pub skipped: usize,
}

/// Metrics for every query of `run` that has at least one relevant item,
/// plus the number of skipped queries.
pub fn score_run(run: &RetrievalRun, options: EvalOptions) -> (Vec<QueryMetrics>, usize) {
    let mut out = Vec::with_capacity(run.rankings.len());
    let mut skipped = 0;
    for r in &run.rankings {
        match query_metrics(r.query, r.query_label, &r.relevant, options) {
            Some(m) => out.push(m),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Micro or macro averages of per-query metrics.
pub fn aggregate(per_query: &[QueryMetrics], mode: Aggregation) -> Result<MetricsReport> {
    if per_query.is_empty() {
        return Err(Error::Empty("no scored queries to aggregate"));
    }
    let pick: [fn(&QueryMetrics) -> f64; 4] = [
        |q| q.average_precision,
        |q| q.pr_auc,
        |q| q.f1,
        |q| q.ndcg,
    ];
    let values: Vec<f64> = match mode {
        Aggregation::Micro => pick
            .iter()
            .map(|f| mean(per_query.iter().map(f)))
            .collect(),
        Aggregation::Macro => {
            let mut by_class: BTreeMap<usize, Vec<&QueryMetrics>> = BTreeMap::new();
            for q in per_query {
                by_class.entry(q.label).or_default().push(q);
            }
            pick.iter()
                .map(|f| mean(by_class.values().map(|qs| mean(qs.iter().map(|q| f(q))))))
                .collect()
        }
    };
    Ok(MetricsReport {
        map: values[0],
        pr_auc: values[1],
        f1: values[2],
        ndcg: values[3],
        aggregation: mode,
        queries: per_query.len(),
        skipped: 0,
    })
}

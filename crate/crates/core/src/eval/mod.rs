//! Retrieval evaluation and embedding-geometry reports.

pub mod geometry;
pub mod metrics;
pub mod retrieval;

use serde::{Deserialize, Serialize};

pub use geometry::{geometry_report, max_pairwise_cosine, ClassGeometry, GeometryReport};
pub use metrics::{
    average_precision, f1_at, ndcg, pr_auc, query_metrics, EvalOptions, QueryMetrics,
};
pub use retrieval::{aggregate, rank, score_run, Aggregation, MetricsReport, Ranking, RetrievalRun};

use crate::error::Result;

/// Micro and macro summaries of one retrieval run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub micro: MetricsReport,
    pub macro_: MetricsReport,
    pub excluded: Vec<usize>,
}

/// Ranks `descriptors` leave-one-out and aggregates every metric.
pub fn evaluate_descriptors<V: AsRef<[f64]>>(
    descriptors: &[V],
    labels: &[usize],
    options: EvalOptions,
) -> Result<RetrievalSummary> {
    let run = rank(descriptors, labels)?;
    let (per_query, skipped) = score_run(&run, options);
    let mut micro = aggregate(&per_query, Aggregation::Micro)?;
    let mut macro_ = aggregate(&per_query, Aggregation::Macro)?;
    micro.skipped = skipped;
    macro_.skipped = skipped;
    Ok(RetrievalSummary {
        micro,
        macro_,
        excluded: run.excluded,
    })
}

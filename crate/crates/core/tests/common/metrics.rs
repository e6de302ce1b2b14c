//! Brute-force metric definitions recomputed from scratch for every rank.

pub fn hits_in_prefix(rel: &[bool], len: usize) -> usize {
    rel[..len].iter().filter(|&&r| r).count()
}

pub fn oracle_ap(rel: &[bool]) -> Option<f64> {
    let total = hits_in_prefix(rel, rel.len());
    if total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for rank in 1..=rel.len() {
        if rel[rank - 1] {
            sum += hits_in_prefix(rel, rank) as f64 / rank as f64;
        }
    }
    Some(sum / total as f64)
}

pub fn oracle_pr_auc(rel: &[bool]) -> Option<f64> {
    let total = hits_in_prefix(rel, rel.len());
    if total == 0 {
        return None;
    }
    let mut curve = vec![(0.0, 1.0)];
    for rank in 1..=rel.len() {
        let hits = hits_in_prefix(rel, rank) as f64;
        curve.push((hits / total as f64, hits / rank as f64));
    }
    Some(
        curve
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum(),
    )
}

pub fn oracle_ndcg(rel: &[bool], cutoff: usize) -> f64 {
    let total = hits_in_prefix(rel, rel.len());
    if total == 0 || cutoff == 0 {
        return 0.0;
    }
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut dcg = 0.0;
    for rank in 1..=cutoff.min(rel.len()) {
        if rel[rank - 1] {
            dcg += gain(rank);
        }
    }
    let mut ideal = 0.0;
    for rank in 1..=total.min(cutoff) {
        ideal += gain(rank);
    }
    dcg / ideal
}

pub fn oracle_f1(rel: &[bool], cutoff: usize) -> f64 {
    let total = hits_in_prefix(rel, rel.len());
    let hits = hits_in_prefix(rel, cutoff.min(rel.len()));
    if total == 0 || hits == 0 {
        return 0.0;
    }
    let p = hits as f64 / cutoff as f64;
    let r = hits as f64 / total as f64;
    2.0 * p * r / (p + r)
}


//! Ranked-retrieval metrics with binary relevance.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Metrics for one ranked list against a binary relevance set.
///
/// All fields except `map` are cut off at `k`; `map` holds the average
/// precision of the full list (its mean across queries is MAP).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub hit_rate: f64,
    pub map: f64,
}

/// Score one ranked list.
///
/// - precision@k = |top-k ∩ relevant| / k
/// - recall@k = |top-k ∩ relevant| / |relevant|
/// - f1 = harmonic mean, 0 when both are 0
/// - DCG@k = Σ over relevant positions i ≤ k of 1 / log2(i + 1) (binary
///   gains, 1-based i); IDCG places min(k, |relevant|) relevant documents
///   at the top; nDCG = DCG / IDCG
/// - hit_rate@k = 1 if any relevant document appears in the top k, else 0
/// - average precision = (Σ over relevant positions r in the full list of
///   precision@r) / |relevant| — positions past k still count, so the value
///   is k-independent
pub fn ranking_metrics(
    ranked: &[String],
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<RankingMetrics, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevanceSet);
    }
    let mut seen = BTreeSet::new();
    for id in ranked {
        if !seen.insert(id) {
            return Err(EvalError::DuplicateRankedId { id: id.clone() });
        }
    }

    let top_k_hits = ranked
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();

    let precision = top_k_hits as f64 / k as f64;
    let recall = top_k_hits as f64 / relevant.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let hit_rate = if top_k_hits > 0 { 1.0 } else { 0.0 };

    let discount = |position: usize| 1.0 / ((position + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(*id))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    let ndcg = dcg / idcg;

    let mut hits_so_far = 0usize;
    let mut precision_sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits_so_far += 1;
            precision_sum += hits_so_far as f64 / (i + 1) as f64;
        }
    }
    let map = precision_sum / relevant.len() as f64;

    Ok(RankingMetrics { k, precision, recall, f1, ndcg, hit_rate, map })
}

/// Field-wise mean over per-query metrics computed at one shared k.
///
/// The mean of the `map` fields is MAP in the usual sense.
pub fn mean_ranking_metrics(per_query: &[RankingMetrics]) -> Result<RankingMetrics, EvalError> {
    let first = per_query.first().ok_or(EvalError::EmptyAggregate)?;
    for m in per_query {
        if m.k != first.k {
            return Err(EvalError::MixedK { left: first.k, right: m.k });
        }
    }
    let n = per_query.len() as f64;
    let mean = |f: fn(&RankingMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
    Ok(RankingMetrics {
        k: first.k,
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        ndcg: mean(|m| m.ndcg),
        hit_rate: mean(|m| m.hit_rate),
        map: mean(|m| m.map),
    })
}

//! Statistical text metrics: ROUGE, BLEU, edit distance, and embedding
//! similarity.
//!
//! Tokenization for the n-gram metrics is lowercase with splits on runs of
//! non-alphanumeric characters, so scores are reproducible across
//! punctuation and casing variants.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::providers::Provider;

/// Lowercase and split on non-alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Which ROUGE variant to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeMode {
    /// Unigram overlap.
    N1,
    /// Bigram overlap.
    N2,
    /// Longest common subsequence.
    L,
}

/// Precision/recall/F1 triple for one ROUGE variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Length of the longest common subsequence of two token slices.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            current[j + 1] = if token_a == token_b {
                prev[j] + 1
            } else {
                prev[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// ROUGE between a candidate and one reference.
///
/// The n-gram modes use clipped overlap counts (each candidate n-gram
/// matches at most as often as it occurs in the reference); the LCS mode
/// scores the longest common subsequence against each side's length.  A
/// candidate or reference shorter than the n-gram order scores zero rather
/// than erroring; only fully token-free input is rejected.
pub fn rouge(candidate: &str, reference: &str, mode: RougeMode) -> Result<RougeScore, EvalError> {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() {
        return Err(EvalError::EmptyAfterTokenization { which: "candidate" });
    }
    if refr.is_empty() {
        return Err(EvalError::EmptyAfterTokenization { which: "reference" });
    }

    let (overlap, cand_total, ref_total) = match mode {
        RougeMode::N1 | RougeMode::N2 => {
            let n = if mode == RougeMode::N1 { 1 } else { 2 };
            let cand_counts = ngram_counts(&cand, n);
            let ref_counts = ngram_counts(&refr, n);
            let overlap: usize = cand_counts
                .iter()
                .map(|(gram, count)| count.min(ref_counts.get(gram).unwrap_or(&0)))
                .sum();
            let cand_total: usize = cand_counts.values().sum();
            let ref_total: usize = ref_counts.values().sum();
            (overlap, cand_total, ref_total)
        }
        RougeMode::L => (lcs_len(&cand, &refr), cand.len(), refr.len()),
    };

    let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
    let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
    Ok(RougeScore { precision, recall, f1: f1_of(precision, recall) })
}

/// BLEU with up-to-4-gram precisions against one or more references.
///
/// Modified n-gram precision clips each candidate n-gram count at the
/// maximum count across the references; a zero match count for some order
/// is smoothed to (m+1)/(t+1).  The brevity penalty is exp(1 − r/c) when
/// the candidate is shorter than the closest reference length r (ties
/// resolve to the shorter reference), and 1 otherwise.
pub fn bleu(candidate: &str, references: &[String]) -> Result<f64, EvalError> {
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return Err(EvalError::EmptyAfterTokenization { which: "candidate" });
    }
    if references.is_empty() {
        return Err(EvalError::EmptyAfterTokenization { which: "reference list" });
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    if refs.iter().any(|r| r.is_empty()) {
        return Err(EvalError::EmptyAfterTokenization { which: "reference" });
    }

    let c = cand.len();
    // Closest reference length; ties go to the shorter one.
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| (len.abs_diff(c), *len))
        .expect("at least one reference");

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand_counts = ngram_counts(&cand, n);
        let total: usize = cand_counts.values().sum();
        let mut matched = 0usize;
        for (gram, count) in &cand_counts {
            let best_ref = refs
                .iter()
                .map(|r| *ngram_counts(r, n).get(gram).unwrap_or(&0))
                .max()
                .unwrap_or(0);
            matched += (*count).min(best_ref);
        }
        let p = if matched == 0 {
            (matched + 1) as f64 / (total + 1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let geometric_mean = (log_sum / 4.0).exp();
    let brevity = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(brevity * geometric_mean)
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

/// Cosine similarity of the two texts' embeddings.
pub fn semantic_similarity(
    a: &str,
    b: &str,
    embedder: &Arc<dyn Provider>,
) -> Result<f64, EvalError> {
    let va = embedder.embed_text(a)?;
    let vb = embedder.embed_text(b)?;
    Ok(va.dot(&vb)?)
}

/// The full text-metric bundle for one candidate/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextMetrics {
    pub semantic_sim: f64,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub bleu: f64,
    pub levenshtein: usize,
}

/// Compute every text metric for one candidate against one reference.
pub fn text_metrics(
    candidate: &str,
    reference: &str,
    embedder: &Arc<dyn Provider>,
) -> Result<TextMetrics, EvalError> {
    Ok(TextMetrics {
        semantic_sim: semantic_similarity(candidate, reference, embedder)?,
        rouge1: rouge(candidate, reference, RougeMode::N1)?,
        rouge2: rouge(candidate, reference, RougeMode::N2)?,
        rouge_l: rouge(candidate, reference, RougeMode::L)?,
        bleu: bleu(candidate, &[reference.to_owned()])?,
        levenshtein: levenshtein(candidate, reference),
    })
}

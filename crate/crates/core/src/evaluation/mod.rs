//! Measurement: ranking metrics for retrieval, statistical text metrics
//! for generated criteria, the three-judge coverage protocol, and the
//! pairwise original-vs-polished comparison.

mod judges;
mod ranking;
mod text;

pub use judges::{
    accuracy_report, compare_polish, judge_objective, AccuracyReport, CompareResult, Coverage,
    EvalTexts, Judge, JudgePanel, JudgeVerdict, Preference, PreferenceVote, StoryAccuracy,
};
pub use ranking::{mean_ranking_metrics, ranking_metrics, RankingMetrics};
pub use text::{
    bleu, levenshtein, rouge, semantic_similarity, text_metrics, RougeMode, RougeScore,
    TextMetrics,
};

use crate::providers::ProviderError;

/// Errors raised while computing metrics or running judge protocols.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    /// Recall and nDCG are undefined without relevant documents; this is
    /// reported as an error, never silently as zero.
    #[error("relevance set is empty; recall and ndcg are undefined")]
    EmptyRelevanceSet,

    /// A ranking contained the same document twice.
    #[error("ranked list contains duplicate id '{id}'")]
    DuplicateRankedId { id: String },

    /// k must be at least 1.
    #[error("k must be >= 1")]
    ZeroK,

    /// A string produced no tokens, so n-gram metrics are undefined.
    #[error("{which} is empty after tokenization")]
    EmptyAfterTokenization { which: &'static str },

    /// No per-query metrics were supplied to aggregate.
    #[error("nothing to aggregate")]
    EmptyAggregate,

    /// Per-query metrics computed at different k cannot be averaged.
    #[error("cannot aggregate metrics computed at different k ({left} vs {right})")]
    MixedK { left: usize, right: usize },

    /// A judge panel needs exactly three members.
    #[error("judge panel needs exactly 3 judges, got {got}")]
    PanelSize { got: usize },

    /// Two panel members share an id.
    #[error("judge panel has duplicate id '{id}'")]
    DuplicateJudge { id: String },

    /// A judge reply carried no recognizable coverage level even after a
    /// reprompt.
    #[error("judge '{judge_id}' gave no parseable coverage verdict (reply was {raw_len} bytes)")]
    UnparseableVerdict { judge_id: String, raw: String, raw_len: usize },

    /// A judge reply carried no recognizable preference even after a
    /// reprompt.
    #[error("judge '{judge_id}' gave no parseable preference (reply was {raw_len} bytes)")]
    UnparseablePreference { judge_id: String, raw: String, raw_len: usize },

    /// The verdict matrix is missing entries or has extras.
    #[error("incomplete verdicts: {detail}")]
    IncompleteVerdicts { detail: String },

    /// The underlying provider failed.
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

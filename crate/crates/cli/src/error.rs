//! Command-level errors and their machine-readable rendering.
//!
//! Every failure path of the binary funnels into [`CliError`]. The `main`
//! wrapper prints [`error_json`] — a single JSON object — on stderr and
//! exits nonzero, so scripts driving the CLI can branch on `error.kind`
//! without parsing prose.

use std::path::PathBuf;

use acgen_core::corpus::DatasetError;
use acgen_core::evaluation::EvalError;
use acgen_core::generation::GenerationError;
use acgen_core::providers::ProviderError;
use acgen_core::retrieval::RetrievalError;
use acgen_core::reward::RewardError;
use thiserror::Error;

/// Anything a subcommand can fail with.
#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration file or the flag overrides are invalid.
    #[error("configuration: {0}")]
    Config(String),

    /// A command was run before the stage that produces its inputs.
    #[error("missing artifact for `{stage}`: {needed}")]
    MissingArtifact { stage: &'static str, needed: String },

    /// Another command holds the run directory's lock.
    #[error("run directory is locked by another command: {path}")]
    Locked { path: PathBuf },

    /// A filesystem operation outside the library crates failed.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted artifact could not be serialized or deserialized.
    #[error("artifact serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error(transparent)]
    Retrieval(#[from] RetrievalError),

    #[error(transparent)]
    Generation(#[from] GenerationError),

    #[error(transparent)]
    Reward(#[from] RewardError),

    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    /// Stable discriminator for scripted consumers.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Locked { .. } => "locked",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
            CliError::Dataset(_) => "dataset",
            CliError::Provider(_) => "provider",
            CliError::Retrieval(_) => "retrieval",
            CliError::Generation(_) => "generation",
            CliError::Reward(_) => "reward",
            CliError::Eval(_) => "eval",
        }
    }
}

/// The single-line JSON object printed to stderr on failure.
pub fn error_json(err: &CliError) -> String {
    serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
        }
    })
    .to_string()
}

/// Shorthand for wrapping an I/O failure with the path it touched.
pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_json_is_a_single_object_with_kind_and_message() {
        let err = CliError::Config("k must be >= 1".into());
        let raw = error_json(&err);
        let value: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(value["error"]["kind"], "config");
        assert_eq!(value["error"]["message"], "configuration: k must be >= 1");
        assert!(!raw.contains('\n'));
    }

    #[test]
    fn every_variant_has_a_distinct_kind() {
        let kinds = [
            CliError::Config(String::new()).kind(),
            CliError::MissingArtifact { stage: "x", needed: String::new() }.kind(),
            CliError::Locked { path: PathBuf::new() }.kind(),
        ];
        let unique: std::collections::BTreeSet<_> = kinds.iter().collect();
        assert_eq!(unique.len(), kinds.len());
    }
}

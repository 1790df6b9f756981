//! `acgen` — a command-line pipeline that turns user stories into Gherkin
//! acceptance criteria and evaluates the result.
//!
//! The pipeline runs in persisted stages over one dataset:
//!
//! 1. `index` — embed domain chunks and UI screenshots into retrieval
//!    indexes (stored in the cache directory, shared across runs).
//! 2. `generate` — retrieve top-k context per story, assemble the prompt,
//!    and parse the model's reply into atomic criteria.
//! 3. `polish` — grade each criteria set against a 1–5 rubric and rewrite
//!    the weakest criterion until the grade clears the threshold.
//! 4. `eval-retrieval` / `eval-acs` — score retrieval against relevance
//!    labels, and criteria against reference sets and coverage objectives
//!    (three-judge panel).
//! 5. `report` — consolidate everything into a JSON + text report.
//!
//! A run directory is named by a content hash over the semantic
//! configuration, the dataset, and the backend fingerprints; reports
//! contain no timestamps or durations, so a warm replay cache reproduces
//! them byte for byte.

pub mod commands;
pub mod config;
pub mod error;
pub mod providers;
pub mod run;

pub use commands::{
    cmd_eval_acs, cmd_eval_retrieval, cmd_generate, cmd_index, cmd_polish, cmd_report,
    AcsReport, GeneratedArtifact, ModalityReport, PolishArtifact, Pipeline, RetrievalReport,
    TranscriptArtifact,
};
pub use config::{CacheMode, Overrides, PipelineConfig};
pub use error::{error_json, CliError};
pub use run::{RunLock, RunManifest, RunPaths};

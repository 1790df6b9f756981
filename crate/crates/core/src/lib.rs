//! Core library for retrieval-augmented generation and evaluation of
//! Gherkin acceptance criteria from user stories.
//!
//! The pipeline is organized as a set of composable modules:
//!
//! - [`corpus`] — the data model: user stories, domain text chunks, visual
//!   documents (UI screenshots), parsed acceptance criteria, and versioned
//!   dataset files on disk.
//! - [`providers`] — uniform access to external model capabilities (chat,
//!   text/image embeddings, image-to-HTML conversion, token log-probabilities)
//!   with deterministic mock, record/replay, and HTTP backends.
//! - [`retrieval`] — textual and visual top-k retrieval over the corpus,
//!   with persistent embedding indices.
//! - [`generation`] — prompt assembly (instruction-following and exemplar
//!   templates, retrieval ablations) and criteria generation with strict
//!   output parsing.
//! - [`reward`] — two-level polishing: a global 1-5 rubric judge gates a loop
//!   that scores each criterion locally, rewrites the weakest one, and stops
//!   when the set is good enough.
//! - [`evaluation`] — ranking metrics, text-overlap metrics, and a
//!   three-judge objective-coverage protocol with accuracy reports.

pub mod corpus;
pub mod evaluation;
pub mod generation;
pub mod providers;
pub mod retrieval;
pub mod reward;

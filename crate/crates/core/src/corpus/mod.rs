//! Data model for the pipeline corpus.
//!
//! A corpus bundles the user stories we generate acceptance criteria for,
//! the domain knowledge used as retrieval context (text chunks and visual
//! documents), and the labels needed for evaluation (reference criteria,
//! segmented objectives, and per-story relevance judgments). Datasets are
//! stored as a single versioned JSON file plus image files on disk; see
//! [`load_dataset`] and [`save_dataset`].

mod dataset;
mod gherkin;

pub use dataset::{load_dataset, save_dataset, DatasetError};
pub use gherkin::{atomicize, parse_gherkin, render_criteria, GherkinError};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// A user story: the unit of work criteria are generated for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStory {
    pub id: String,
    /// Short label, e.g. "Password reset".
    pub title: String,
    /// The story sentence, typically "As a .., I want .., so that ..".
    pub narrative: String,
    /// Optional elaborations written by the story author (notes, constraints).
    #[serde(default)]
    pub extensions: Vec<String>,
}

impl UserStory {
    /// The flat text used as the retrieval query and in prompts: title,
    /// narrative, and extensions joined by newlines.
    pub fn query_text(&self) -> String {
        let mut parts = Vec::with_capacity(2 + self.extensions.len());
        parts.push(self.title.as_str());
        parts.push(self.narrative.as_str());
        parts.extend(self.extensions.iter().map(String::as_str));
        parts.join("\n")
    }
}

/// What role a text chunk plays in the domain corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    /// Descriptive domain background.
    Background,
    /// Design or policy considerations that constrain behavior.
    Consideration,
}

/// A paragraph-sized piece of domain documentation used as textual
/// retrieval context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainChunk {
    pub id: String,
    pub text: String,
    pub kind: ChunkKind,
    /// Where the chunk came from (document name, URL, ...); informational.
    #[serde(default)]
    pub source: String,
}

/// Raw image bytes plus their media type tag (`image/png` or `image/jpeg`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageData {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

/// A visual document: a UI screenshot with optional HTML renderings and a
/// caption. `html_pruned` may only be present alongside `html_full` and is
/// never longer than it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualDoc {
    pub id: String,
    pub image: ImageData,
    pub html_full: Option<String>,
    pub html_pruned: Option<String>,
    pub caption: Option<String>,
}

/// One parsed acceptance criterion in GIVEN/WHEN/THEN form.
///
/// Each clause list is non-empty. `raw` is the criterion's source text when
/// it was parsed from text, or the canonical rendering when it was built
/// programmatically (see [`render_criteria`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCriterion {
    pub given: Vec<String>,
    pub when: Vec<String>,
    pub then: Vec<String>,
    pub raw: String,
}

impl AcceptanceCriterion {
    /// Builds a criterion from clause lists; `raw` is set to the canonical
    /// rendering. Callers must pass non-empty lists of non-empty clauses.
    pub fn from_parts(given: Vec<String>, when: Vec<String>, then: Vec<String>) -> Self {
        let mut ac = AcceptanceCriterion { given, when, then, raw: String::new() };
        ac.raw = ac.render();
        ac
    }

    /// Canonical single-line rendering with uppercase keywords and clauses
    /// joined by AND.
    pub fn render(&self) -> String {
        format!(
            "GIVEN {} WHEN {} THEN {}",
            self.given.join(" AND "),
            self.when.join(" AND "),
            self.then.join(" AND ")
        )
    }

    /// True when the criterion asserts exactly one outcome.
    pub fn is_atomic(&self) -> bool {
        self.then.len() == 1
    }
}

/// A reference objective: one behavior a story's criteria should cover,
/// pre-segmented by annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthObjective {
    pub id: String,
    pub story_id: String,
    pub text: String,
}

/// A full corpus with labels, as loaded from one dataset file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub stories: Vec<UserStory>,
    pub chunks: Vec<DomainChunk>,
    pub visuals: Vec<VisualDoc>,
    /// Reference acceptance criteria per story id.
    pub ground_truth: BTreeMap<String, Vec<AcceptanceCriterion>>,
    /// Segmented coverage objectives per story id.
    pub objectives: BTreeMap<String, Vec<GroundTruthObjective>>,
    /// Relevant document ids (chunk or visual) per story id.
    pub relevance: BTreeMap<String, BTreeSet<String>>,
    /// Free-form dataset description (e.g. marking it as synthetic).
    pub description: Option<String>,
}

impl Dataset {
    /// Content fingerprint over everything that affects pipeline outputs:
    /// stories, chunks, visuals (by image digest), labels.
    pub fn fingerprint(&self) -> String {
        dataset::fingerprint(self)
    }

    /// All retrievable document ids (chunks and visuals).
    pub fn doc_ids(&self) -> BTreeSet<String> {
        self.chunks
            .iter()
            .map(|c| c.id.clone())
            .chain(self.visuals.iter().map(|v| v.id.clone()))
            .collect()
    }
}

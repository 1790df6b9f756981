//! Helpers shared by the integration-test binaries: a ready-made pipeline
//! configuration over the bundled toy dataset and the offline mock backend,
//! plus small readers for run artifacts and cache records.

#![allow(dead_code)] // each test binary uses its own subset

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use acgen_cli::commands::TranscriptArtifact;
use acgen_cli::config::{
    CacheMode, CacheSection, GenerationSection, Paths, PipelineConfig, PolishSection,
    ProviderSpec, RetrievalSection, Roles, TextsSection,
};
use acgen_core::providers::Part;

pub fn toy_dataset_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/toy/dataset.json")
}

/// A complete config over the toy dataset with one mock backend bound to
/// every role, rooted at a (typically temporary) directory.
pub fn toy_config(dir: &Path, mode: CacheMode) -> PipelineConfig {
    PipelineConfig {
        paths: Paths {
            dataset: toy_dataset_path(),
            cache_dir: dir.join("cache"),
            run_root: dir.join("runs"),
        },
        retrieval: RetrievalSection::default(),
        generation: GenerationSection::default(),
        polish: PolishSection::default(),
        cache: CacheSection { mode },
        providers: BTreeMap::from([(
            "offline".to_owned(),
            ProviderSpec::Mock { dim: Some(24), label: Some("toy".into()) },
        )]),
        roles: Roles {
            generator: "offline".into(),
            embedder: "offline".into(),
            converter: "offline".into(),
            scorer: "offline".into(),
            global_judge: "offline".into(),
            polisher: "offline".into(),
            judges: vec!["offline".into(), "offline".into(), "offline".into()],
        },
        texts: TextsSection::default(),
        exemplars: Vec::new(),
    }
}

/// Every JSON value under `dir`, recursively (missing dir: empty).
pub fn json_values_under(dir: &Path) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        return out;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            out.extend(json_values_under(&path));
        } else if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let bytes = std::fs::read(&path).unwrap();
            out.push(serde_json::from_slice(&bytes).unwrap());
        }
    }
    out
}

/// All text parts of a transcript concatenated, for substring scans.
pub fn transcript_texts(transcript: &TranscriptArtifact) -> String {
    let mut all = String::new();
    for message in &transcript.messages {
        for part in &message.parts {
            if let Part::Text { text } = part {
                all.push_str(text);
                all.push('\n');
            }
        }
    }
    all
}

pub fn transcript_image_parts(transcript: &TranscriptArtifact) -> usize {
    transcript
        .messages
        .iter()
        .flat_map(|m| m.parts.iter())
        .filter(|p| matches!(p, Part::Image { .. }))
        .count()
}

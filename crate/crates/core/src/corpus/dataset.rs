//! Versioned dataset files.
//!
//! A dataset is one JSON object (schema version `"1"`) with the keys
//! `stories`, `chunks`, `visuals`, `ground_truth`, `objectives`, and
//! `relevance`, plus an optional `description`. Images are referenced by
//! file path relative to the dataset file and are loaded eagerly so a
//! loaded [`Dataset`] is self-contained. Reference criteria are stored as
//! GIVEN/WHEN/THEN text and parsed on load; each string must parse to
//! exactly one criterion.
//!
//! Validation is strict: schema violations report a JSON pointer to the
//! offending element, ids must be unique across all collections, and every
//! cross-reference (label keys to stories, relevance values to documents)
//! must resolve.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{
    parse_gherkin, ChunkKind, Dataset, DomainChunk, GroundTruthObjective, ImageData, UserStory,
    VisualDoc,
};

/// Current dataset schema version.
const SCHEMA_VERSION: &str = "1";

/// Why a dataset file failed to load or save.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// The JSON did not match the schema; `pointer` locates the problem
    /// (empty pointer = the document itself).
    #[error("schema error at \"{pointer}\": {message}")]
    SchemaError { pointer: String, message: String },
    /// The same id is used twice (ids are unique across stories, chunks,
    /// visuals, and objectives together).
    #[error("duplicate id \"{id}\" at \"{pointer}\"")]
    DuplicateId { id: String, pointer: String },
    /// A label references an id that does not exist.
    #[error("dangling reference to \"{target}\" at \"{pointer}\"")]
    DanglingReference { target: String, pointer: String },
    /// A referenced image file is missing.
    #[error("image file not found: {path}")]
    ImageNotFound { path: PathBuf },
}

impl DatasetError {
    fn schema(pointer: impl Into<String>, message: impl ToString) -> Self {
        DatasetError::SchemaError { pointer: pointer.into(), message: message.to_string() }
    }
}

// ---------------------------------------------------------------------------
// File-layer representation
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FileDataset {
    version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    stories: Vec<FileStory>,
    chunks: Vec<FileChunk>,
    visuals: Vec<FileVisual>,
    ground_truth: BTreeMap<String, Vec<String>>,
    objectives: BTreeMap<String, Vec<FileObjective>>,
    relevance: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileStory {
    id: String,
    title: String,
    narrative: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extensions: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileChunk {
    id: String,
    text: String,
    kind: ChunkKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileVisual {
    id: String,
    /// Image path relative to the dataset file.
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    html_full: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    html_pruned: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileObjective {
    id: String,
    text: String,
}

fn media_type_for(path: &str) -> Option<&'static str> {
    let ext = Path::new(path).extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some("image/png"),
        "jpg" | "jpeg" => Some("image/jpeg"),
        _ => None,
    }
}

fn extension_for(media_type: &str) -> &'static str {
    if media_type == "image/jpeg" {
        "jpg"
    } else {
        "png"
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Extracts one element of a JSON array into a typed value, reporting the
/// element's pointer on failure.
fn element<T: serde::de::DeserializeOwned>(
    value: Value,
    pointer: &str,
) -> Result<T, DatasetError> {
    serde_json::from_value(value).map_err(|e| DatasetError::schema(pointer, e))
}

fn take_array(doc: &mut serde_json::Map<String, Value>, key: &str) -> Result<Vec<Value>, DatasetError> {
    match doc.remove(key) {
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(DatasetError::schema(format!("/{key}"), "expected an array")),
        None => Err(DatasetError::schema("", format!("missing key \"{key}\""))),
    }
}

/// Loads a dataset file, eagerly reading every referenced image.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let root: Value = serde_json::from_slice(&bytes)
        .map_err(|e| DatasetError::schema("", format!("invalid JSON: {e}")))?;
    let Value::Object(mut doc) = root else {
        return Err(DatasetError::schema("", "expected a JSON object"));
    };

    match doc.get("version") {
        Some(Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(Value::String(v)) => {
            return Err(DatasetError::schema(
                "/version",
                format!("unsupported version \"{v}\", expected \"{SCHEMA_VERSION}\""),
            ));
        }
        _ => return Err(DatasetError::schema("/version", "missing or non-string version")),
    }

    let description = match doc.get("description") {
        Some(Value::String(s)) => Some(s.clone()),
        None => None,
        Some(_) => return Err(DatasetError::schema("/description", "expected a string")),
    };

    // Typed extraction with per-element pointers.
    let mut stories = Vec::new();
    for (i, item) in take_array(&mut doc, "stories")?.into_iter().enumerate() {
        let pointer = format!("/stories/{i}");
        let s: FileStory = element(item, &pointer)?;
        if s.narrative.trim().is_empty() {
            return Err(DatasetError::schema(format!("{pointer}/narrative"), "must be non-empty"));
        }
        stories.push(s);
    }
    let mut chunks = Vec::new();
    for (i, item) in take_array(&mut doc, "chunks")?.into_iter().enumerate() {
        let pointer = format!("/chunks/{i}");
        let c: FileChunk = element(item, &pointer)?;
        if c.text.trim().is_empty() {
            return Err(DatasetError::schema(format!("{pointer}/text"), "must be non-empty"));
        }
        chunks.push(c);
    }
    let mut visuals = Vec::new();
    for (i, item) in take_array(&mut doc, "visuals")?.into_iter().enumerate() {
        let pointer = format!("/visuals/{i}");
        let v: FileVisual = element(item, &pointer)?;
        if v.html_pruned.is_some() && v.html_full.is_none() {
            return Err(DatasetError::schema(
                format!("{pointer}/html_pruned"),
                "html_pruned requires html_full",
            ));
        }
        if let (Some(full), Some(pruned)) = (&v.html_full, &v.html_pruned) {
            if pruned.len() > full.len() {
                return Err(DatasetError::schema(
                    format!("{pointer}/html_pruned"),
                    "html_pruned must not be longer than html_full",
                ));
            }
        }
        visuals.push(v);
    }

    let ground_truth: BTreeMap<String, Vec<String>> = match doc.remove("ground_truth") {
        Some(v) => element(v, "/ground_truth")?,
        None => return Err(DatasetError::schema("", "missing key \"ground_truth\"")),
    };
    let objectives: BTreeMap<String, Vec<FileObjective>> = match doc.remove("objectives") {
        Some(v) => element(v, "/objectives")?,
        None => return Err(DatasetError::schema("", "missing key \"objectives\"")),
    };
    let relevance: BTreeMap<String, Vec<String>> = match doc.remove("relevance") {
        Some(v) => element(v, "/relevance")?,
        None => return Err(DatasetError::schema("", "missing key \"relevance\"")),
    };

    // Id uniqueness across all collections.
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut claim = |id: &str, pointer: String| -> Result<(), DatasetError> {
        if id.trim().is_empty() {
            return Err(DatasetError::schema(pointer, "id must be non-empty"));
        }
        if !seen.insert(id.to_owned()) {
            return Err(DatasetError::DuplicateId { id: id.to_owned(), pointer });
        }
        Ok(())
    };
    for (i, s) in stories.iter().enumerate() {
        claim(&s.id, format!("/stories/{i}/id"))?;
    }
    for (i, c) in chunks.iter().enumerate() {
        claim(&c.id, format!("/chunks/{i}/id"))?;
    }
    for (i, v) in visuals.iter().enumerate() {
        claim(&v.id, format!("/visuals/{i}/id"))?;
    }
    for (story_id, objs) in &objectives {
        for (i, o) in objs.iter().enumerate() {
            claim(&o.id, format!("/objectives/{story_id}/{i}/id"))?;
        }
    }

    let story_ids: BTreeSet<&str> = stories.iter().map(|s| s.id.as_str()).collect();
    let doc_ids: BTreeSet<&str> = chunks
        .iter()
        .map(|c| c.id.as_str())
        .chain(visuals.iter().map(|v| v.id.as_str()))
        .collect();

    // Cross-reference checks.
    for key in ground_truth.keys() {
        if !story_ids.contains(key.as_str()) {
            return Err(DatasetError::DanglingReference {
                target: key.clone(),
                pointer: format!("/ground_truth/{key}"),
            });
        }
    }
    for key in objectives.keys() {
        if !story_ids.contains(key.as_str()) {
            return Err(DatasetError::DanglingReference {
                target: key.clone(),
                pointer: format!("/objectives/{key}"),
            });
        }
    }
    for (key, ids) in &relevance {
        if !story_ids.contains(key.as_str()) {
            return Err(DatasetError::DanglingReference {
                target: key.clone(),
                pointer: format!("/relevance/{key}"),
            });
        }
        let mut set = BTreeSet::new();
        for (i, id) in ids.iter().enumerate() {
            if !doc_ids.contains(id.as_str()) {
                return Err(DatasetError::DanglingReference {
                    target: id.clone(),
                    pointer: format!("/relevance/{key}/{i}"),
                });
            }
            if !set.insert(id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    id: id.clone(),
                    pointer: format!("/relevance/{key}/{i}"),
                });
            }
        }
    }

    // Parse reference criteria; each string must hold exactly one criterion.
    let mut parsed_ground_truth = BTreeMap::new();
    for (story_id, texts) in &ground_truth {
        let mut acs = Vec::with_capacity(texts.len());
        for (i, text) in texts.iter().enumerate() {
            let pointer = format!("/ground_truth/{story_id}/{i}");
            let mut parsed = parse_gherkin(text).map_err(|e| DatasetError::schema(&pointer, e))?;
            if parsed.len() != 1 {
                return Err(DatasetError::schema(
                    pointer,
                    format!("expected exactly one criterion, found {}", parsed.len()),
                ));
            }
            acs.push(parsed.remove(0));
        }
        parsed_ground_truth.insert(story_id.clone(), acs);
    }

    // Load images.
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut loaded_visuals = Vec::with_capacity(visuals.len());
    for (i, v) in visuals.into_iter().enumerate() {
        let media_type = media_type_for(&v.image).ok_or_else(|| {
            DatasetError::schema(
                format!("/visuals/{i}/image"),
                format!("unsupported image extension in \"{}\"", v.image),
            )
        })?;
        let image_path = base.join(&v.image);
        if !image_path.is_file() {
            return Err(DatasetError::ImageNotFound { path: image_path });
        }
        let bytes = std::fs::read(&image_path)
            .map_err(|source| DatasetError::Io { path: image_path.clone(), source })?;
        if bytes.is_empty() {
            return Err(DatasetError::schema(
                format!("/visuals/{i}/image"),
                "image file is empty",
            ));
        }
        loaded_visuals.push(VisualDoc {
            id: v.id,
            image: ImageData { bytes, media_type: media_type.to_owned() },
            html_full: v.html_full,
            html_pruned: v.html_pruned,
            caption: v.caption,
        });
    }

    Ok(Dataset {
        stories: stories
            .into_iter()
            .map(|s| UserStory {
                id: s.id,
                title: s.title,
                narrative: s.narrative,
                extensions: s.extensions,
            })
            .collect(),
        chunks: chunks
            .into_iter()
            .map(|c| DomainChunk { id: c.id, text: c.text, kind: c.kind, source: c.source })
            .collect(),
        visuals: loaded_visuals,
        ground_truth: parsed_ground_truth,
        objectives: objectives
            .into_iter()
            .map(|(story_id, objs)| {
                let objs = objs
                    .into_iter()
                    .map(|o| GroundTruthObjective {
                        id: o.id,
                        story_id: story_id.clone(),
                        text: o.text,
                    })
                    .collect();
                (story_id, objs)
            })
            .collect(),
        relevance: relevance
            .into_iter()
            .map(|(k, ids)| (k, ids.into_iter().collect()))
            .collect(),
        description,
    })
}

// ---------------------------------------------------------------------------
// Saving
// ---------------------------------------------------------------------------

fn file_form(dataset: &Dataset, image_ref: impl Fn(&VisualDoc) -> String) -> FileDataset {
    FileDataset {
        version: SCHEMA_VERSION.to_owned(),
        description: dataset.description.clone(),
        stories: dataset
            .stories
            .iter()
            .map(|s| FileStory {
                id: s.id.clone(),
                title: s.title.clone(),
                narrative: s.narrative.clone(),
                extensions: s.extensions.clone(),
            })
            .collect(),
        chunks: dataset
            .chunks
            .iter()
            .map(|c| FileChunk {
                id: c.id.clone(),
                text: c.text.clone(),
                kind: c.kind,
                source: c.source.clone(),
            })
            .collect(),
        visuals: dataset
            .visuals
            .iter()
            .map(|v| FileVisual {
                id: v.id.clone(),
                image: image_ref(v),
                caption: v.caption.clone(),
                html_full: v.html_full.clone(),
                html_pruned: v.html_pruned.clone(),
            })
            .collect(),
        ground_truth: dataset
            .ground_truth
            .iter()
            .map(|(k, acs)| (k.clone(), acs.iter().map(|ac| ac.raw.clone()).collect()))
            .collect(),
        objectives: dataset
            .objectives
            .iter()
            .map(|(k, objs)| {
                let objs = objs
                    .iter()
                    .map(|o| FileObjective { id: o.id.clone(), text: o.text.clone() })
                    .collect();
                (k.clone(), objs)
            })
            .collect(),
        relevance: dataset
            .relevance
            .iter()
            .map(|(k, ids)| (k.clone(), ids.iter().cloned().collect()))
            .collect(),
    }
}

/// Saves a dataset as JSON plus image files under `images/` next to it.
/// Loading the result produces a dataset equal to the input.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let io_err = |p: &Path, source| DatasetError::Io { path: p.to_path_buf(), source };

    if !dataset.visuals.is_empty() {
        let image_dir = base.join("images");
        std::fs::create_dir_all(&image_dir).map_err(|e| io_err(&image_dir, e))?;
        for v in &dataset.visuals {
            let file = image_dir.join(format!("{}.{}", v.id, extension_for(&v.image.media_type)));
            std::fs::write(&file, &v.image.bytes).map_err(|e| io_err(&file, e))?;
        }
    }

    let file = file_form(dataset, |v| {
        format!("images/{}.{}", v.id, extension_for(&v.image.media_type))
    });
    let json = serde_json::to_string_pretty(&file).expect("dataset serialization is infallible");
    std::fs::write(path, json).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Content fingerprint of a dataset: a hex digest over its canonical file
/// form, with image contents folded in by digest.
pub(super) fn fingerprint(dataset: &Dataset) -> String {
    let file = file_form(dataset, |v| {
        let mut hasher = Sha256::new();
        hasher.update(&v.image.bytes);
        format!("sha256:{:x}", hasher.finalize())
    });
    let json = serde_json::to_string(&file).expect("dataset serialization is infallible");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    format!("{:x}", hasher.finalize())
}

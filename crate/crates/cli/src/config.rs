//! Pipeline configuration: a TOML file plus flag overrides.
//!
//! The file names every model backend once under `[providers.NAME]` and
//! binds pipeline roles to those names under `[roles]`, so one backend can
//! serve several roles (or each role its own). Everything else — retrieval
//! shape, prompt template, ablation, polish knobs, cache mode — has
//! defaults, so a minimal config is just paths, one provider, and the role
//! bindings.
//!
//! Relative paths in `[paths]` are resolved against the directory holding
//! the config file, so a checked-in config works from any working
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use acgen_core::corpus::parse_gherkin;
use acgen_core::evaluation::EvalTexts;
use acgen_core::generation::{default_exemplars, Ablation, Exemplar, PromptTexts, TemplateKind};
use acgen_core::retrieval::{TextStrategy, VisualVariant};
use acgen_core::reward::{RewardTexts, ScorerKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError};

/// Where the pipeline reads and writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// The dataset JSON file.
    pub dataset: PathBuf,
    /// Replay-cache and index storage; shared across runs.
    pub cache_dir: PathBuf,
    /// Parent of per-run directories.
    pub run_root: PathBuf,
}

/// Retrieval shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub strategy: TextStrategy,
    pub variant: VisualVariant,
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            strategy: TextStrategy::DenseCosine,
            variant: VisualVariant::HtmlPruned,
            k: 5,
        }
    }
}

/// Prompting shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub template: TemplateKind,
    pub ablation: Ablation,
    /// Maximum assembled request size in bytes; unset means unlimited.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_prompt_bytes: Option<usize>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            template: TemplateKind::Apeer,
            ablation: Ablation::Full,
            max_prompt_bytes: None,
        }
    }
}

/// Reward-loop knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolishSection {
    /// Accept the criteria set once the global judge scores at or above
    /// this level (1–5).
    pub threshold: u8,
    pub max_rounds: usize,
    pub scorer: ScorerKind,
}

impl Default for PolishSection {
    fn default() -> Self {
        PolishSection { threshold: 5, max_rounds: 1, scorer: ScorerKind::Verifier }
    }
}

/// How provider calls interact with the on-disk replay cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Call backends directly; never touch the cache.
    Off,
    /// Call backends and write every exchange to the cache.
    Record,
    /// Serve everything from the cache; a miss is an error. No network.
    Replay,
    /// Serve hits from the cache, record misses.
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheSection {
    pub mode: CacheMode,
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection { mode: CacheMode::Auto }
    }
}

/// One model backend, declared once and referenced by name from `[roles]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// The deterministic offline backend.
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// An OpenAI-style HTTP backend. The API key is read from the
    /// environment variable named here — secrets never live in the file.
    Http {
        endpoint: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding_model: Option<String>,
        api_key_env: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_parallel: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding_dim: Option<usize>,
    },
}

/// Which declared provider serves each pipeline role.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    /// Writes the acceptance criteria (and scores chunks under the
    /// likelihood retrieval strategy).
    pub generator: String,
    /// Embeds queries, chunks, and screenshots.
    pub embedder: String,
    /// Converts screenshots to HTML for the markup retrieval variants.
    pub converter: String,
    /// Scores individual criteria inside the polish loop.
    pub scorer: String,
    /// Grades whole criteria sets against the rubric.
    pub global_judge: String,
    /// Rewrites the weakest criterion.
    pub polisher: String,
    /// The three coverage judges, in panel order.
    pub judges: Vec<String>,
}

/// Optional overrides for every model-facing instruction text.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextsSection {
    pub prompt: PromptTexts,
    pub reward: RewardTexts,
    pub eval: EvalTexts,
}

/// One few-shot exemplar as written in the config file: the worked story
/// plus its criteria in plain Gherkin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarSpec {
    pub story: String,
    pub criteria: Vec<String>,
}

/// The whole pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub polish: PolishSection,
    #[serde(default)]
    pub cache: CacheSection,
    pub providers: BTreeMap<String, ProviderSpec>,
    pub roles: Roles,
    #[serde(default)]
    pub texts: TextsSection,
    /// Few-shot exemplars; empty means the built-in pair (only consulted
    /// by the few-shot template).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<ExemplarSpec>,
}

/// Flag values that override the corresponding config-file fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub run_root: Option<PathBuf>,
    pub strategy: Option<String>,
    pub variant: Option<String>,
    pub k: Option<usize>,
    pub template: Option<String>,
    pub ablation: Option<String>,
    pub max_prompt_bytes: Option<usize>,
    pub threshold: Option<u8>,
    pub max_rounds: Option<usize>,
    pub scorer: Option<String>,
    pub cache_mode: Option<String>,
}

/// Parses a snake_case enum value by its canonical serde name.
fn parse_enum<T: DeserializeOwned>(what: &str, raw: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(raw.to_owned()))
        .map_err(|_| CliError::Config(format!("unrecognized {what}: '{raw}'")))
}

impl PipelineConfig {
    /// Reads, resolves, overrides, and validates a configuration.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: PipelineConfig = toml::from_str(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.apply(overrides)?;
        config.validate()?;
        Ok(config)
    }

    /// Makes the three paths absolute relative to `base`.
    fn resolve_paths(&mut self, base: &Path) {
        for path in
            [&mut self.paths.dataset, &mut self.paths.cache_dir, &mut self.paths.run_root]
        {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
    }

    /// Applies flag overrides on top of the file values.
    fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(v) = &o.dataset {
            self.paths.dataset = v.clone();
        }
        if let Some(v) = &o.cache_dir {
            self.paths.cache_dir = v.clone();
        }
        if let Some(v) = &o.run_root {
            self.paths.run_root = v.clone();
        }
        if let Some(v) = &o.strategy {
            self.retrieval.strategy = parse_enum("strategy", v)?;
        }
        if let Some(v) = &o.variant {
            self.retrieval.variant = parse_enum("variant", v)?;
        }
        if let Some(v) = o.k {
            self.retrieval.k = v;
        }
        if let Some(v) = &o.template {
            self.generation.template = parse_enum("template", v)?;
        }
        if let Some(v) = &o.ablation {
            self.generation.ablation = parse_enum("ablation", v)?;
        }
        if let Some(v) = o.max_prompt_bytes {
            self.generation.max_prompt_bytes = Some(v);
        }
        if let Some(v) = o.threshold {
            self.polish.threshold = v;
        }
        if let Some(v) = o.max_rounds {
            self.polish.max_rounds = v;
        }
        if let Some(v) = &o.scorer {
            self.polish.scorer = parse_enum("scorer", v)?;
        }
        if let Some(v) = &o.cache_mode {
            self.cache.mode = parse_enum("cache mode", v)?;
        }
        Ok(())
    }

    /// Checks every cross-field rule a single serde pass cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.retrieval.k < 1 {
            return Err(CliError::Config("retrieval.k must be >= 1".into()));
        }
        if !(1..=5).contains(&self.polish.threshold) {
            return Err(CliError::Config("polish.threshold must be between 1 and 5".into()));
        }
        if self.polish.max_rounds < 1 {
            return Err(CliError::Config("polish.max_rounds must be >= 1".into()));
        }
        if self.roles.judges.len() != 3 {
            return Err(CliError::Config(format!(
                "roles.judges must list exactly 3 providers, got {}",
                self.roles.judges.len()
            )));
        }
        for (role, name) in self.role_bindings() {
            if !self.providers.contains_key(&name) {
                return Err(CliError::Config(format!(
                    "role '{role}' references undeclared provider '{name}'"
                )));
            }
        }
        if self.generation.template == TemplateKind::Apeer && !self.exemplars.is_empty() {
            return Err(CliError::Config(
                "exemplars are only used by the few-shot template; remove them or switch \
                 generation.template"
                    .into(),
            ));
        }
        // Secrets must be present before anything could go on the wire.
        // Replay mode never makes a network call, so it alone is exempt.
        if self.cache.mode != CacheMode::Replay {
            for (name, spec) in &self.providers {
                if !self.is_referenced(name) {
                    continue;
                }
                if let ProviderSpec::Http { api_key_env, .. } = spec {
                    if std::env::var(api_key_env).is_err() {
                        return Err(CliError::Config(format!(
                            "provider '{name}' needs environment variable '{api_key_env}'"
                        )));
                    }
                }
            }
        }
        self.template_exemplars()?;
        Ok(())
    }

    /// All `(role label, provider name)` pairs, judges expanded.
    pub fn role_bindings(&self) -> Vec<(String, String)> {
        let r = &self.roles;
        let mut bindings = vec![
            ("generator".to_owned(), r.generator.clone()),
            ("embedder".to_owned(), r.embedder.clone()),
            ("converter".to_owned(), r.converter.clone()),
            ("scorer".to_owned(), r.scorer.clone()),
            ("global_judge".to_owned(), r.global_judge.clone()),
            ("polisher".to_owned(), r.polisher.clone()),
        ];
        for (i, name) in r.judges.iter().enumerate() {
            bindings.push((format!("judge_{i}"), name.clone()));
        }
        bindings
    }

    fn is_referenced(&self, provider_name: &str) -> bool {
        self.role_bindings().iter().any(|(_, name)| name == provider_name)
    }

    /// The exemplars the few-shot template will use: the configured ones,
    /// parsed from plain Gherkin, or the built-in pair when none are
    /// configured. Empty for the zero-shot template.
    pub fn template_exemplars(&self) -> Result<Vec<Exemplar>, CliError> {
        if self.generation.template == TemplateKind::Apeer {
            return Ok(Vec::new());
        }
        if self.exemplars.is_empty() {
            return Ok(default_exemplars());
        }
        let mut out = Vec::with_capacity(self.exemplars.len());
        for (i, spec) in self.exemplars.iter().enumerate() {
            let mut criteria = Vec::new();
            for block in &spec.criteria {
                let parsed = parse_gherkin(block).map_err(|e| {
                    CliError::Config(format!("exemplars[{i}]: unparseable criteria: {e}"))
                })?;
                criteria.extend(parsed);
            }
            if criteria.is_empty() {
                return Err(CliError::Config(format!(
                    "exemplars[{i}] must contain at least one criterion"
                )));
            }
            out.push(Exemplar { story: spec.story.clone(), criteria });
        }
        Ok(out)
    }

    /// Everything that determines pipeline *outputs*, as one canonical JSON
    /// value. Paths and cache mode are deliberately excluded: where
    /// artifacts live and whether calls were replayed must not change a
    /// run's identity, or cold and warm executions could never share a run
    /// directory.
    pub fn run_identity(
        &self,
        dataset_fingerprint: &str,
        provider_fingerprints: &BTreeMap<String, String>,
    ) -> serde_json::Value {
        serde_json::json!({
            "retrieval": self.retrieval,
            "generation": self.generation,
            "polish": self.polish,
            "texts": self.texts,
            "exemplars": self.exemplars,
            "providers": provider_fingerprints,
            "dataset": dataset_fingerprint,
        })
    }
}

//! The six pipeline commands and the run state they share.
//!
//! Stage order is `index` → `generate` → `polish` → `eval-retrieval` /
//! `eval-acs` → `report`, but each stage checks for the *files* it needs
//! rather than a recorded sequence, so artifacts cached by earlier runs
//! (indexes are shared through the cache directory) compose freely into
//! grid sweeps over strategies, variants, templates, and ablations.
//!
//! Every command is idempotent given a warm replay cache, and nothing
//! nondeterministic — timestamps, durations, absolute paths — is written
//! into `reports/`, so re-running a stage reproduces its outputs byte for
//! byte. Wall-clock timings land only in the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use acgen_core::corpus::{
    load_dataset, render_criteria, AcceptanceCriterion, Dataset, UserStory, VisualDoc,
};
use acgen_core::evaluation::{
    accuracy_report, compare_polish, judge_objective, mean_ranking_metrics, ranking_metrics,
    text_metrics, AccuracyReport, CompareResult, Judge, JudgePanel, JudgeVerdict, Preference,
    RankingMetrics, TextMetrics,
};
use acgen_core::generation::{
    build_prompt, generate_acs, Ablation, PromptBudget, PromptTemplate, TemplateKind, TextContext,
    VisualContext,
};
use acgen_core::providers::Message;
use acgen_core::retrieval::{
    index_text, index_visual, query_text, query_visual, EmbedCache, RetrievalConfig, TextIndex,
    VisualIndex, VisualVariant,
};
use acgen_core::reward::{polish, PolishConfig, PolishContext, PolishOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{io_err, CliError};
use crate::providers::{build_providers, RoleProviders};
use crate::run::{
    read_json, run_id_for, sha256_hex, update_manifest, write_json_atomic, RunLock, RunManifest,
    RunPaths,
};

/// The serde name of a unit enum variant (e.g. `dense_cosine`).
fn enum_name<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "unknown".to_owned(),
    }
}

// ---------------------------------------------------------------------------
// Run state

/// Everything the commands need: validated config, loaded dataset, live
/// providers, and the run directory the configuration hashes to.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub dataset: Dataset,
    pub dataset_fingerprint: String,
    pub roles: RoleProviders,
    pub run_id: String,
    pub run: RunPaths,
}

impl Pipeline {
    /// Validates, loads, binds, and locks. The returned [`RunLock`] holds
    /// the run directory for the life of the command.
    pub fn prepare(config: PipelineConfig) -> Result<(Pipeline, RunLock), CliError> {
        config.validate()?;
        let dataset = load_dataset(&config.paths.dataset)?;
        let dataset_fingerprint = dataset.fingerprint();
        let roles = build_providers(&config)?;
        let identity = config.run_identity(&dataset_fingerprint, &roles.fingerprints);
        let run_id = run_id_for(&identity);
        let run = RunPaths::new(&config.paths.run_root, &run_id);
        run.ensure_layout()?;
        let lock = RunLock::acquire(&run)?;
        if !run.manifest().exists() {
            let manifest = RunManifest {
                run_id: run_id.clone(),
                config: serde_json::to_value(&config)?,
                dataset_fingerprint: dataset_fingerprint.clone(),
                provider_fingerprints: roles.fingerprints.clone(),
                ablation: config.generation.ablation,
                transcript_hashes: BTreeMap::new(),
                stage_wall_ms: BTreeMap::new(),
            };
            write_json_atomic(&run.manifest(), &manifest)?;
        }
        let pipeline = Pipeline { config, dataset, dataset_fingerprint, roles, run_id, run };
        Ok((pipeline, lock))
    }

    fn indexes_dir(&self) -> PathBuf {
        self.config.paths.cache_dir.join("indexes")
    }

    /// Index files are keyed by everything that determines their content,
    /// so runs with the same strategy, backend, and dataset share them.
    pub fn text_index_path(&self) -> PathBuf {
        let strategy = enum_name(&self.config.retrieval.strategy);
        let fingerprint =
            self.roles.text_retriever(self.config.retrieval.strategy).fingerprint();
        let key = sha256_hex(
            format!("text|{strategy}|{fingerprint}|{}", self.dataset_fingerprint).as_bytes(),
        );
        self.indexes_dir().join(format!("text-{strategy}-{}.json", &key[..16]))
    }

    pub fn visual_index_path(&self) -> PathBuf {
        let variant = self.config.retrieval.variant;
        let embedder = self.roles.embedder.fingerprint();
        // The converter only shapes markup-based indexes; direct embedding
        // never invokes it, so its identity must not invalidate those.
        let converter = match variant {
            VisualVariant::DirectEmbedding => "-".to_owned(),
            _ => self.roles.converter.fingerprint(),
        };
        let name = enum_name(&variant);
        let key = sha256_hex(
            format!("visual|{name}|{embedder}|{converter}|{}", self.dataset_fingerprint)
                .as_bytes(),
        );
        self.indexes_dir().join(format!("visual-{name}-{}.json", &key[..16]))
    }

    /// The prompt template the configuration describes.
    pub fn prompt_template(&self) -> Result<PromptTemplate, CliError> {
        let texts = self.config.texts.prompt.clone();
        Ok(match self.config.generation.template {
            TemplateKind::Apeer => PromptTemplate::apeer(texts),
            TemplateKind::Urial => {
                PromptTemplate::urial(texts, self.config.template_exemplars()?)?
            }
        })
    }

    /// Stories in deterministic (id) order.
    fn sorted_stories(&self) -> Vec<&UserStory> {
        let mut stories: Vec<&UserStory> = self.dataset.stories.iter().collect();
        stories.sort_by(|a, b| a.id.cmp(&b.id));
        stories
    }

    /// The three coverage judges with stable panel ids.
    fn judge_panel(&self) -> Result<JudgePanel, CliError> {
        let judges = self
            .roles
            .judges
            .iter()
            .enumerate()
            .map(|(i, provider)| Judge::new(format!("judge-{i}"), std::sync::Arc::clone(provider)))
            .collect();
        Ok(JudgePanel::new(judges)?)
    }
}

/// Runs `f`, then records its wall time in the manifest under `stage`.
fn timed<T>(
    pipeline: &Pipeline,
    stage: &'static str,
    f: impl FnOnce() -> Result<T, CliError>,
) -> Result<T, CliError> {
    let start = Instant::now();
    let out = f()?;
    let wall_ms = start.elapsed().as_millis();
    update_manifest(&pipeline.run, |m| {
        m.stage_wall_ms.insert(stage.to_owned(), wall_ms);
    })?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persisted per-story artifacts

/// Criteria as they came out of generation, with parsing bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedArtifact {
    pub story_id: String,
    /// The raw model reply the criteria were parsed from.
    pub raw: String,
    pub acs: Vec<AcceptanceCriterion>,
    /// Reformat retries the parser needed (0 or 1).
    pub retries: usize,
    /// Document ids shed to fit the prompt budget, in drop order.
    pub truncated: Vec<String>,
}

/// The full generation dialogue for one story.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptArtifact {
    pub story_id: String,
    pub messages: Vec<Message>,
}

/// The reward loop's result for one story.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolishArtifact {
    pub story_id: String,
    pub outcome: PolishOutcome,
}

// ---------------------------------------------------------------------------
// index

/// Builds and persists the retrieval indexes the current ablation needs.
pub fn cmd_index(pipeline: &Pipeline) -> Result<String, CliError> {
    timed(pipeline, "index", || {
        let ablation = pipeline.config.generation.ablation;
        if ablation == Ablation::NoRag {
            return Ok("nothing to index: retrieval is disabled by the ablation".to_owned());
        }
        let dir = pipeline.indexes_dir();
        std::fs::create_dir_all(&dir).map_err(io_err(dir))?;

        let strategy = pipeline.config.retrieval.strategy;
        let index = index_text(
            pipeline.roles.text_retriever(strategy),
            &pipeline.dataset.chunks,
            strategy,
        )?;
        let text_path = pipeline.text_index_path();
        index.save(&text_path)?;
        let mut lines = vec![format!(
            "text index: {} chunks -> {}",
            pipeline.dataset.chunks.len(),
            text_path.display()
        )];

        if ablation == Ablation::Full {
            let index = index_visual(
                &pipeline.roles.embedder,
                &pipeline.roles.converter,
                &pipeline.dataset.visuals,
                pipeline.config.retrieval.variant,
            )?;
            let visual_path = pipeline.visual_index_path();
            index.save(&visual_path)?;
            lines.push(format!(
                "visual index: {} screenshots -> {}",
                pipeline.dataset.visuals.len(),
                visual_path.display()
            ));
        }
        Ok(lines.join("\n"))
    })
}

// ---------------------------------------------------------------------------
// generate

/// Loads the text index, failing with a stage-order error if absent.
fn load_text_index(pipeline: &Pipeline, stage: &'static str) -> Result<TextIndex, CliError> {
    let path = pipeline.text_index_path();
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage,
            needed: format!("text index {} (run `acgen index` first)", path.display()),
        });
    }
    let strategy = pipeline.config.retrieval.strategy;
    let fingerprint = pipeline.roles.text_retriever(strategy).fingerprint();
    Ok(TextIndex::load(&path, &fingerprint)?)
}

fn load_visual_index(pipeline: &Pipeline, stage: &'static str) -> Result<VisualIndex, CliError> {
    let path = pipeline.visual_index_path();
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage,
            needed: format!("visual index {} (run `acgen index` first)", path.display()),
        });
    }
    Ok(VisualIndex::load(&path, &pipeline.roles.embedder.fingerprint())?)
}

/// Retrieves context and generates criteria for every story.
pub fn cmd_generate(pipeline: &Pipeline) -> Result<String, CliError> {
    timed(pipeline, "generate", || {
        let ablation = pipeline.config.generation.ablation;
        let text_index = match ablation {
            Ablation::NoRag => None,
            _ => Some(load_text_index(pipeline, "generate")?),
        };
        let visual_index = match ablation {
            Ablation::Full => Some(load_visual_index(pipeline, "generate")?),
            _ => None,
        };
        let template = pipeline.prompt_template()?;
        let budget = PromptBudget { max_bytes: pipeline.config.generation.max_prompt_bytes };
        let retrieval = RetrievalConfig { k: pipeline.config.retrieval.k };
        let cache = EmbedCache::new();
        let visuals_by_id: BTreeMap<&str, &VisualDoc> =
            pipeline.dataset.visuals.iter().map(|v| (v.id.as_str(), v)).collect();

        let stories = pipeline.sorted_stories();
        let hashes: Vec<(String, String)> = stories
            .par_iter()
            .map(|story| -> Result<(String, String), CliError> {
                let text_hits: Vec<TextContext> = match &text_index {
                    Some(index) => {
                        let provider =
                            pipeline.roles.text_retriever(pipeline.config.retrieval.strategy);
                        query_text(provider, index, story, &retrieval, Some(&cache))?
                            .into_iter()
                            .map(|hit| TextContext {
                                text: index.texts[&hit.doc_id].clone(),
                                hit,
                            })
                            .collect()
                    }
                    None => Vec::new(),
                };
                let visual_hits: Vec<VisualContext> = match &visual_index {
                    Some(index) => {
                        query_visual(&pipeline.roles.embedder, index, story, &retrieval, Some(&cache))?
                            .into_iter()
                            .map(|hit| {
                                let doc = visuals_by_id[hit.doc_id.as_str()];
                                VisualContext {
                                    image: doc.image.clone(),
                                    caption: doc.caption.clone(),
                                    hit,
                                }
                            })
                            .collect()
                    }
                    None => Vec::new(),
                };

                let prompt =
                    build_prompt(&template, story, &text_hits, &visual_hits, ablation, &budget)?;
                let output =
                    generate_acs(&pipeline.roles.generator, &prompt, &pipeline.config.texts.prompt)?;

                let artifact = GeneratedArtifact {
                    story_id: story.id.clone(),
                    raw: output.raw,
                    acs: output.acs,
                    retries: output.retries,
                    truncated: prompt.truncated,
                };
                write_json_atomic(&pipeline.run.generated_file(&story.id), &artifact)?;

                let transcript =
                    TranscriptArtifact { story_id: story.id.clone(), messages: output.transcript };
                let path = pipeline.run.transcript_file(&story.id);
                write_json_atomic(&path, &transcript)?;
                let bytes = std::fs::read(&path).map_err(io_err(path))?;
                Ok((story.id.clone(), sha256_hex(&bytes)))
            })
            .collect::<Result<_, _>>()?;

        update_manifest(&pipeline.run, |m| {
            m.transcript_hashes = hashes.into_iter().collect();
        })?;
        Ok(format!("generated acceptance criteria for {} stories", stories.len()))
    })
}

// ---------------------------------------------------------------------------
// polish

/// Runs the reward loop over every generated criteria set.
pub fn cmd_polish(pipeline: &Pipeline) -> Result<String, CliError> {
    timed(pipeline, "polish", || {
        let stories: Vec<&UserStory> = pipeline
            .sorted_stories()
            .into_iter()
            .filter(|s| pipeline.run.generated_file(&s.id).exists())
            .collect();
        if stories.is_empty() {
            return Err(CliError::MissingArtifact {
                stage: "polish",
                needed: "generated criteria (run `acgen generate` first)".to_owned(),
            });
        }
        let cfg = PolishConfig {
            threshold: pipeline.config.polish.threshold,
            max_rounds: pipeline.config.polish.max_rounds,
            local_scorer: pipeline.config.polish.scorer,
        };
        let changed: usize = stories
            .par_iter()
            .map(|story| -> Result<usize, CliError> {
                let generated: GeneratedArtifact =
                    read_json(&pipeline.run.generated_file(&story.id))?;
                let transcript: TranscriptArtifact =
                    read_json(&pipeline.run.transcript_file(&story.id))?;
                let ctx = PolishContext {
                    judge: &pipeline.roles.global_judge,
                    scorer: &pipeline.roles.scorer,
                    polisher: &pipeline.roles.polisher,
                    base_dialogue: &transcript.messages,
                    texts: &pipeline.config.texts.reward,
                };
                let outcome = polish(story, &generated.acs, &cfg, &ctx)?;
                let rounds = outcome.rounds_executed;
                let artifact = PolishArtifact { story_id: story.id.clone(), outcome };
                write_json_atomic(&pipeline.run.polished_file(&story.id), &artifact)?;
                Ok(usize::from(rounds > 0))
            })
            .sum::<Result<usize, CliError>>()?;
        Ok(format!(
            "polished {} stories ({} received at least one replacement)",
            stories.len(),
            changed
        ))
    })
}

// ---------------------------------------------------------------------------
// eval-retrieval

/// Ranking quality of one retrieval modality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityReport {
    /// Stories with at least one relevant document in this modality.
    pub stories: usize,
    pub per_story: BTreeMap<String, RankingMetrics>,
    /// Field-wise mean over `per_story`; absent when no story qualified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<RankingMetrics>,
}

/// The persisted `reports/retrieval.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub strategy: acgen_core::retrieval::TextStrategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<VisualVariant>,
    pub text: ModalityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visual: Option<ModalityReport>,
}

fn modality_report(per_story: BTreeMap<String, RankingMetrics>) -> Result<ModalityReport, CliError> {
    let mean = if per_story.is_empty() {
        None
    } else {
        let metrics: Vec<RankingMetrics> = per_story.values().cloned().collect();
        Some(mean_ranking_metrics(&metrics)?)
    };
    Ok(ModalityReport { stories: per_story.len(), per_story, mean })
}

/// Scores retrieval against the dataset's relevance labels.
pub fn cmd_eval_retrieval(pipeline: &Pipeline) -> Result<String, CliError> {
    timed(pipeline, "eval-retrieval", || {
        let ablation = pipeline.config.generation.ablation;
        if ablation == Ablation::NoRag {
            return Err(CliError::Config(
                "retrieval evaluation needs retrieval enabled; the ablation is no_rag".into(),
            ));
        }
        let text_index = load_text_index(pipeline, "eval-retrieval")?;
        let visual_index = match ablation {
            Ablation::Full => Some(load_visual_index(pipeline, "eval-retrieval")?),
            _ => None,
        };
        let k = pipeline.config.retrieval.k;
        let retrieval = RetrievalConfig { k };
        let cache = EmbedCache::new();

        let mut text_scores = BTreeMap::new();
        let mut visual_scores = BTreeMap::new();
        for story in pipeline.sorted_stories() {
            let Some(relevant) = pipeline.dataset.relevance.get(&story.id) else {
                continue;
            };
            let relevant_chunks: BTreeSet<String> = relevant
                .iter()
                .filter(|id| text_index.texts.contains_key(*id))
                .cloned()
                .collect();
            if !relevant_chunks.is_empty() {
                let provider = pipeline.roles.text_retriever(pipeline.config.retrieval.strategy);
                let hits = query_text(provider, &text_index, story, &retrieval, Some(&cache))?;
                let ranked: Vec<String> = hits.into_iter().map(|h| h.doc_id).collect();
                text_scores
                    .insert(story.id.clone(), ranking_metrics(&ranked, &relevant_chunks, k)?);
            }
            if let Some(index) = &visual_index {
                let relevant_visuals: BTreeSet<String> = relevant
                    .iter()
                    .filter(|id| index.embeddings.contains_key(*id))
                    .cloned()
                    .collect();
                if !relevant_visuals.is_empty() {
                    let hits = query_visual(
                        &pipeline.roles.embedder,
                        index,
                        story,
                        &retrieval,
                        Some(&cache),
                    )?;
                    let ranked: Vec<String> = hits.into_iter().map(|h| h.doc_id).collect();
                    visual_scores
                        .insert(story.id.clone(), ranking_metrics(&ranked, &relevant_visuals, k)?);
                }
            }
        }

        let report = RetrievalReport {
            k,
            strategy: pipeline.config.retrieval.strategy,
            variant: visual_index.is_some().then_some(pipeline.config.retrieval.variant),
            text: modality_report(text_scores)?,
            visual: match visual_index {
                Some(_) => Some(modality_report(visual_scores)?),
                None => None,
            },
        };
        write_json_atomic(&pipeline.run.retrieval_report(), &report)?;
        let mut summary = format!("retrieval/text: {}", describe_ranking(&report.text));
        if let Some(visual) = &report.visual {
            summary.push_str(&format!("\nretrieval/visual: {}", describe_ranking(visual)));
        }
        Ok(summary)
    })
}

fn describe_ranking(modality: &ModalityReport) -> String {
    match &modality.mean {
        Some(m) => format!(
            "{} stories, P@{} {:.4}, R@{} {:.4}, F1 {:.4}, nDCG {:.4}, hit {:.4}, MAP {:.4}",
            modality.stories, m.k, m.precision, m.k, m.recall, m.f1, m.ndcg, m.hit_rate, m.map
        ),
        None => "no stories with relevance labels".to_owned(),
    }
}

// ---------------------------------------------------------------------------
// eval-acs

/// Field-wise mean of per-story text metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanTextMetrics {
    pub semantic_sim: f64,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    pub rouge_l_f1: f64,
    pub bleu: f64,
    pub levenshtein: f64,
}

/// What was evaluated for one story and how it scored textually.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoryEval {
    /// Which artifact was judged: `polished` when present, else
    /// `generated`.
    pub source: String,
    pub criteria: usize,
    /// Similarity to the reference criteria; absent when the story has no
    /// ground truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<TextMetrics>,
}

/// The persisted `reports/acs.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcsReport {
    pub stories: BTreeMap<String, StoryEval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_mean: Option<MeanTextMetrics>,
    /// Coverage accuracy under the three-judge protocol; absent when the
    /// dataset defines no objectives for the evaluated stories.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
    /// Every individual verdict, for audits; sorted by objective then
    /// judge.
    pub verdicts: Vec<JudgeVerdict>,
    /// Original-versus-polished panel decisions, for stories whose polish
    /// pass changed something.
    pub comparisons: BTreeMap<String, CompareResult>,
}

type StoryEvalRow = (String, StoryEval, Vec<JudgeVerdict>, Option<CompareResult>);

/// Judges generated (or polished) criteria against objectives and ground
/// truth.
pub fn cmd_eval_acs(pipeline: &Pipeline) -> Result<String, CliError> {
    timed(pipeline, "eval-acs", || {
        let stories: Vec<&UserStory> = pipeline
            .sorted_stories()
            .into_iter()
            .filter(|s| pipeline.run.generated_file(&s.id).exists())
            .collect();
        if stories.is_empty() {
            return Err(CliError::MissingArtifact {
                stage: "eval-acs",
                needed: "generated criteria (run `acgen generate` first)".to_owned(),
            });
        }
        let panel = pipeline.judge_panel()?;

        let rows: Vec<StoryEvalRow> = stories
            .par_iter()
            .map(|story| -> Result<StoryEvalRow, CliError> {
                let generated: GeneratedArtifact =
                    read_json(&pipeline.run.generated_file(&story.id))?;
                let polished_path = pipeline.run.polished_file(&story.id);
                let polished: Option<PolishArtifact> = if polished_path.exists() {
                    Some(read_json(&polished_path)?)
                } else {
                    None
                };
                let (source, evaluated) = match &polished {
                    Some(artifact) => ("polished", artifact.outcome.acs.clone()),
                    None => ("generated", generated.acs.clone()),
                };

                let text = match pipeline.dataset.ground_truth.get(&story.id) {
                    Some(reference_acs) if !reference_acs.is_empty() => Some(text_metrics(
                        &render_criteria(&evaluated),
                        &render_criteria(reference_acs),
                        &pipeline.roles.embedder,
                    )?),
                    _ => None,
                };

                let mut verdicts = Vec::new();
                if let Some(objectives) = pipeline.dataset.objectives.get(&story.id) {
                    for objective in objectives {
                        verdicts.extend(judge_objective(
                            objective,
                            &evaluated,
                            story,
                            &panel,
                            &pipeline.config.texts.eval,
                        )?);
                    }
                }

                let comparison = match &polished {
                    Some(artifact) if artifact.outcome.acs != generated.acs => {
                        Some(compare_polish(
                            story,
                            &generated.acs,
                            &artifact.outcome.acs,
                            &panel,
                            &pipeline.config.texts.eval,
                        )?)
                    }
                    _ => None,
                };

                let eval = StoryEval { source: source.to_owned(), criteria: evaluated.len(), text };
                Ok((story.id.clone(), eval, verdicts, comparison))
            })
            .collect::<Result<_, _>>()?;

        let mut story_evals = BTreeMap::new();
        let mut verdicts = Vec::new();
        let mut comparisons = BTreeMap::new();
        let mut objectives_by_story = BTreeMap::new();
        for (story_id, eval, story_verdicts, comparison) in rows {
            if let Some(objectives) = pipeline.dataset.objectives.get(&story_id) {
                if !objectives.is_empty() {
                    objectives_by_story.insert(
                        story_id.clone(),
                        objectives.iter().map(|o| o.id.clone()).collect::<Vec<_>>(),
                    );
                }
            }
            verdicts.extend(story_verdicts);
            if let Some(comparison) = comparison {
                comparisons.insert(story_id.clone(), comparison);
            }
            story_evals.insert(story_id, eval);
        }
        verdicts.sort_by(|a, b| {
            (&a.objective_id, &a.judge_id).cmp(&(&b.objective_id, &b.judge_id))
        });

        let accuracy = if objectives_by_story.is_empty() {
            None
        } else {
            Some(accuracy_report(&verdicts, &objectives_by_story)?)
        };
        let text_mean = mean_text_metrics(story_evals.values().filter_map(|e| e.text.as_ref()));

        let report = AcsReport { stories: story_evals, text_mean, accuracy, verdicts, comparisons };
        write_json_atomic(&pipeline.run.acs_report(), &report)?;

        let mut summary = format!("evaluated {} stories", report.stories.len());
        if let Some(accuracy) = &report.accuracy {
            summary.push_str(&format!(
                "\ncoverage: hit(point) {:.4}, cor(point) {:.4}, hit(case) {:.4}, cor(case) {:.4}",
                accuracy.hit_point, accuracy.cor_point, accuracy.hit_case, accuracy.cor_case
            ));
        }
        if !report.comparisons.is_empty() {
            let unanimous = report.comparisons.values().filter(|c| c.unanimous_better).count();
            summary.push_str(&format!(
                "\npolish preferred unanimously for {unanimous}/{} changed stories",
                report.comparisons.len()
            ));
        }
        Ok(summary)
    })
}

fn mean_text_metrics<'a>(
    metrics: impl Iterator<Item = &'a TextMetrics>,
) -> Option<MeanTextMetrics> {
    let collected: Vec<&TextMetrics> = metrics.collect();
    if collected.is_empty() {
        return None;
    }
    let n = collected.len() as f64;
    let sum = |f: &dyn Fn(&TextMetrics) -> f64| collected.iter().map(|m| f(m)).sum::<f64>() / n;
    Some(MeanTextMetrics {
        semantic_sim: sum(&|m| m.semantic_sim),
        rouge1_f1: sum(&|m| m.rouge1.f1),
        rouge2_f1: sum(&|m| m.rouge2.f1),
        rouge_l_f1: sum(&|m| m.rouge_l.f1),
        bleu: sum(&|m| m.bleu),
        levenshtein: sum(&|m| m.levenshtein as f64),
    })
}

// ---------------------------------------------------------------------------
// report

/// Consolidates evaluation outputs into `report.json` + `report.txt`.
///
/// Deliberately *not* timed: recording a timing for it would change the
/// manifest it reads, and the command must be byte-stable when repeated.
pub fn cmd_report(pipeline: &Pipeline) -> Result<String, CliError> {
    let manifest: RunManifest = read_json(&pipeline.run.manifest())?;
    let retrieval: Option<RetrievalReport> = if pipeline.run.retrieval_report().exists() {
        Some(read_json(&pipeline.run.retrieval_report())?)
    } else {
        None
    };
    let acs: Option<AcsReport> = if pipeline.run.acs_report().exists() {
        Some(read_json(&pipeline.run.acs_report())?)
    } else {
        None
    };
    if retrieval.is_none() && acs.is_none() {
        return Err(CliError::MissingArtifact {
            stage: "report",
            needed: "an evaluation report (run `acgen eval-retrieval` or `acgen eval-acs` first)"
                .to_owned(),
        });
    }

    // Stage names only — the millisecond values are wall-clock noise and
    // must not leak into a deterministic report.
    let stages: Vec<&String> = manifest.stage_wall_ms.keys().collect();
    let consolidated = serde_json::json!({
        "run_id": manifest.run_id,
        "dataset_fingerprint": manifest.dataset_fingerprint,
        "provider_fingerprints": manifest.provider_fingerprints,
        "settings": {
            "retrieval": pipeline.config.retrieval,
            "generation": pipeline.config.generation,
            "polish": pipeline.config.polish,
        },
        "stages": stages,
        "retrieval": retrieval,
        "acs": acs,
    });
    write_json_atomic(&pipeline.run.consolidated_report(), &consolidated)?;

    let text = render_text_report(pipeline, &manifest, retrieval.as_ref(), acs.as_ref());
    let path = pipeline.run.text_report();
    std::fs::write(&path, &text).map_err(io_err(path))?;
    Ok(text.trim_end().to_owned())
}

fn render_text_report(
    pipeline: &Pipeline,
    manifest: &RunManifest,
    retrieval: Option<&RetrievalReport>,
    acs: Option<&AcsReport>,
) -> String {
    let cfg = &pipeline.config;
    let mut lines = vec![
        format!("run {}", manifest.run_id),
        format!("dataset {}", manifest.dataset_fingerprint),
        format!(
            "settings: ablation={} template={} strategy={} variant={} k={}",
            enum_name(&cfg.generation.ablation),
            enum_name(&cfg.generation.template),
            enum_name(&cfg.retrieval.strategy),
            enum_name(&cfg.retrieval.variant),
            cfg.retrieval.k
        ),
        format!(
            "polish: threshold={} max_rounds={} scorer={}",
            cfg.polish.threshold,
            cfg.polish.max_rounds,
            enum_name(&cfg.polish.scorer)
        ),
        format!(
            "stages: {}",
            manifest.stage_wall_ms.keys().cloned().collect::<Vec<_>>().join(", ")
        ),
        String::new(),
    ];
    if let Some(report) = retrieval {
        lines.push(format!("retrieval/text: {}", describe_ranking(&report.text)));
        if let Some(visual) = &report.visual {
            lines.push(format!("retrieval/visual: {}", describe_ranking(visual)));
        }
    }
    if let Some(report) = acs {
        let polished =
            report.stories.values().filter(|story| story.source == "polished").count();
        lines.push(format!(
            "criteria: {} stories evaluated ({} from the polish stage)",
            report.stories.len(),
            polished
        ));
        if let Some(accuracy) = &report.accuracy {
            lines.push(format!(
                "coverage: hit(point) {:.4}  cor(point) {:.4}  hit(case) {:.4}  cor(case) {:.4}",
                accuracy.hit_point, accuracy.cor_point, accuracy.hit_case, accuracy.cor_case
            ));
        }
        if let Some(mean) = &report.text_mean {
            lines.push(format!(
                "text vs. reference: sem {:.4}  rouge1 {:.4}  rouge2 {:.4}  rougeL {:.4}  bleu \
                 {:.4}  lev {:.1}",
                mean.semantic_sim,
                mean.rouge1_f1,
                mean.rouge2_f1,
                mean.rouge_l_f1,
                mean.bleu,
                mean.levenshtein
            ));
        }
        if !report.comparisons.is_empty() {
            let unanimous = report.comparisons.values().filter(|c| c.unanimous_better).count();
            let ties = report
                .comparisons
                .values()
                .filter(|c| c.votes.iter().any(|v| v.preference == Preference::Tie))
                .count();
            lines.push(format!(
                "polish panel: {unanimous}/{} unanimous improvements, {ties} with ties",
                report.comparisons.len()
            ));
        }
    }
    lines.push(String::new());
    lines.join("\n")
}

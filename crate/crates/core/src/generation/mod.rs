//! Prompt assembly and criterion generation.
//!
//! A prompt is assembled from a template (two styles: a single structured
//! instruction, or few-shot exemplar dialogue), the target user story, and
//! the retrieved context — text chunks as labeled blocks and screenshots as
//! inline base64 image parts, each group in rank order.  Ablation modes
//! drop the visual context or all retrieved context entirely.
//!
//! Assembly is a pure function: equal inputs produce byte-identical
//! requests.  Oversized prompts shed their lowest-ranked context first and
//! the shed document ids are reported, never dropped silently.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::corpus::{atomicize, parse_gherkin, render_criteria, AcceptanceCriterion, ImageData, UserStory};
use crate::providers::{ChatRequest, Message, Part, Provider, ProviderError, Role, Sampling};
use crate::retrieval::RetrievalHit;

/// Errors from prompt assembly or generation.
#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    /// Retrieved context was supplied in an ablation mode that forbids it.
    #[error("ablation {mode:?} forbids {what}")]
    AblationViolation { mode: Ablation, what: String },

    /// The prompt exceeds the provider limit even with every retrieved
    /// block removed.
    #[error("prompt is {size} bytes with all context dropped; limit is {limit}")]
    OversizePrompt { size: usize, limit: usize },

    /// A template was constructed with an invalid exemplar set.
    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    /// Both the first reply and the reformat retry failed to parse.
    #[error("model output unparseable after retry; first reply {first_len} bytes, second {second_len} bytes")]
    UnparseableOutput {
        first: String,
        second: String,
        first_len: usize,
        second_len: usize,
    },

    /// The underlying provider failed.
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Which retrieved context the prompt may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Text blocks and images both included.
    Full,
    /// Text blocks only; no images.
    NoVrag,
    /// Story and instructions only; no retrieved context at all.
    NoRag,
}

/// Prompt style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// Single structured instruction: role, task, ground knowledge, output
    /// format.
    Apeer,
    /// Few-shot: worked story/criteria pairs precede the target story as
    /// in-context dialogue turns.
    Urial,
}

/// One worked example for the few-shot style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    /// The example story, in the same prose form the target story uses.
    pub story: String,
    /// Its acceptance criteria.
    pub criteria: Vec<AcceptanceCriterion>,
}

/// Every piece of prose the prompts are built from, editable as config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTexts {
    pub role: String,
    pub task: String,
    pub knowledge_header: String,
    pub screenshot_label: String,
    pub story_header: String,
    pub output_format: String,
    pub reformat: String,
}

impl Default for PromptTexts {
    fn default() -> Self {
        PromptTexts {
            role: "You are a senior QA engineer who writes precise, testable \
                   acceptance criteria for software user stories."
                .to_owned(),
            task: "Write the acceptance criteria for the user story below. Ground \
                   every criterion in the story and in any domain knowledge or \
                   interface screenshots provided."
                .to_owned(),
            knowledge_header: "Domain knowledge:".to_owned(),
            screenshot_label: "Interface screenshot".to_owned(),
            story_header: "User story:".to_owned(),
            output_format: "Write each acceptance criterion on its own line in \
                            exactly this form: GIVEN <precondition> WHEN <action> \
                            THEN <outcome>. Start every criterion with GIVEN, join \
                            extra clauses with AND, and state exactly one outcome \
                            per THEN. Output only the criteria lines."
                .to_owned(),
            reformat: "That reply could not be parsed. Answer again with only \
                       acceptance criteria lines, one per line, each in the exact \
                       form GIVEN ... WHEN ... THEN ... and nothing else."
                .to_owned(),
        }
    }
}

/// Two built-in worked examples for the few-shot style, drawn from domains
/// deliberately unlike any evaluation corpus.
pub fn default_exemplars() -> Vec<Exemplar> {
    vec![
        Exemplar {
            story: "As a registered user, I want to reset my password via email, \
                    so that I can regain access when I forget it."
                .to_owned(),
            criteria: vec![
                AcceptanceCriterion::from_parts(
                    vec!["a registered user is on the login page".to_owned()],
                    vec!["they request a password reset for their email address".to_owned()],
                    vec!["a reset link is sent to that address".to_owned()],
                ),
                AcceptanceCriterion::from_parts(
                    vec!["a reset link older than 24 hours".to_owned()],
                    vec!["the user opens the link".to_owned()],
                    vec!["an expiry message is shown".to_owned()],
                ),
            ],
        },
        Exemplar {
            story: "As a shopper, I want to remove an item from my cart, so that \
                    I only pay for what I intend to buy."
                .to_owned(),
            criteria: vec![
                AcceptanceCriterion::from_parts(
                    vec!["a cart containing two items".to_owned()],
                    vec!["the shopper removes one item".to_owned()],
                    vec!["the cart shows the remaining item".to_owned()],
                ),
                AcceptanceCriterion::from_parts(
                    vec!["a cart containing two items".to_owned()],
                    vec!["the shopper removes one item".to_owned()],
                    vec!["the order total is updated".to_owned()],
                ),
            ],
        },
    ]
}

/// A prompt template: the style, its exemplars, and the prose it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    /// Worked examples; non-empty exactly when `kind` is few-shot.
    pub exemplars: Vec<Exemplar>,
    pub texts: PromptTexts,
}

impl PromptTemplate {
    /// The single-instruction style (no exemplars).
    pub fn apeer(texts: PromptTexts) -> Self {
        PromptTemplate { kind: TemplateKind::Apeer, exemplars: Vec::new(), texts }
    }

    /// The few-shot style; requires at least one exemplar.
    pub fn urial(texts: PromptTexts, exemplars: Vec<Exemplar>) -> Result<Self, GenerationError> {
        if exemplars.is_empty() {
            return Err(GenerationError::InvalidTemplate(
                "few-shot template needs at least one exemplar".into(),
            ));
        }
        Ok(PromptTemplate { kind: TemplateKind::Urial, exemplars, texts })
    }

    /// Checks the style/exemplar pairing, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), GenerationError> {
        match self.kind {
            TemplateKind::Apeer if !self.exemplars.is_empty() => Err(
                GenerationError::InvalidTemplate(
                    "single-instruction template must not carry exemplars".into(),
                ),
            ),
            TemplateKind::Urial if self.exemplars.is_empty() => Err(
                GenerationError::InvalidTemplate(
                    "few-shot template needs at least one exemplar".into(),
                ),
            ),
            _ => Ok(()),
        }
    }
}

/// A retrieved text chunk ready for prompting: the hit plus the chunk text.
#[derive(Debug, Clone)]
pub struct TextContext {
    pub hit: RetrievalHit,
    pub text: String,
}

/// A retrieved screenshot ready for prompting: the hit plus the payload.
#[derive(Debug, Clone)]
pub struct VisualContext {
    pub hit: RetrievalHit,
    pub image: ImageData,
    pub caption: Option<String>,
}

/// Byte budget for an assembled prompt (text plus base64 image payloads).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptBudget {
    /// Maximum request size in bytes; `None` means unlimited.
    pub max_bytes: Option<usize>,
}

/// The assembled request plus a record of anything shed to fit the budget.
#[derive(Debug, Clone)]
pub struct AssembledPrompt {
    pub request: ChatRequest,
    /// Document ids dropped to fit the budget, in drop order.
    pub truncated: Vec<String>,
}

fn request_size(messages: &[Message]) -> usize {
    messages
        .iter()
        .flat_map(|m| m.parts.iter())
        .map(|p| match p {
            Part::Text { text } => text.len(),
            Part::Image { data_base64, .. } => data_base64.len(),
        })
        .sum()
}

fn assemble(
    template: &PromptTemplate,
    story: &UserStory,
    text_hits: &[TextContext],
    visual_hits: &[VisualContext],
) -> Vec<Message> {
    let texts = &template.texts;
    let mut messages = vec![Message::system(&texts.role)];

    if template.kind == TemplateKind::Urial {
        for exemplar in &template.exemplars {
            messages.push(Message::user(format!(
                "{}\n{}\n\n{}",
                texts.story_header, exemplar.story, texts.output_format
            )));
            messages.push(Message::assistant(render_criteria(&exemplar.criteria)));
        }
    }

    let mut parts: Vec<Part> = Vec::new();
    let mut opening = texts.task.clone();
    if !text_hits.is_empty() {
        opening.push_str("\n\n");
        opening.push_str(&texts.knowledge_header);
        for ctx in text_hits {
            opening.push_str(&format!("\n[{}] {}", ctx.hit.rank, ctx.text));
        }
    }
    parts.push(Part::Text { text: opening });

    for ctx in visual_hits {
        let label = match &ctx.caption {
            Some(caption) => {
                format!("{} [{}]: {}", texts.screenshot_label, ctx.hit.rank, caption)
            }
            None => format!("{} [{}]:", texts.screenshot_label, ctx.hit.rank),
        };
        parts.push(Part::Text { text: label });
        let mut carrier = Message { role: Role::User, parts: Vec::new() };
        carrier = carrier.with_image(&ctx.image);
        parts.extend(carrier.parts);
    }

    parts.push(Part::Text {
        text: format!(
            "{}\n{}\n\n{}",
            texts.story_header,
            story.query_text(),
            texts.output_format
        ),
    });

    messages.push(Message { role: Role::User, parts });
    messages
}

/// Assemble the generation request for one story.
///
/// Context blocks appear in rank order, text before images.  Under
/// [`Ablation::NoRag`] no hits may be supplied at all; under
/// [`Ablation::NoVrag`] no visual hits may be.  When a byte budget is set
/// and exceeded, hits are shed lowest-rank-first — comparing the worst
/// remaining text hit and the worst remaining visual hit, dropping
/// whichever ranks lower, images first on equal rank — until the request
/// fits; every shed document id is logged and recorded on the result.
pub fn build_prompt(
    template: &PromptTemplate,
    story: &UserStory,
    text_hits: &[TextContext],
    visual_hits: &[VisualContext],
    ablation: Ablation,
    budget: &PromptBudget,
) -> Result<AssembledPrompt, GenerationError> {
    template.validate()?;
    match ablation {
        Ablation::NoRag if !text_hits.is_empty() || !visual_hits.is_empty() => {
            return Err(GenerationError::AblationViolation {
                mode: ablation,
                what: "retrieved context".into(),
            });
        }
        Ablation::NoVrag if !visual_hits.is_empty() => {
            return Err(GenerationError::AblationViolation {
                mode: ablation,
                what: "visual context".into(),
            });
        }
        _ => {}
    }

    let mut text_hits: Vec<TextContext> = text_hits.to_vec();
    let mut visual_hits: Vec<VisualContext> = visual_hits.to_vec();
    text_hits.sort_by_key(|c| c.hit.rank);
    visual_hits.sort_by_key(|c| c.hit.rank);

    let mut truncated = Vec::new();
    let messages = loop {
        let messages = assemble(template, story, &text_hits, &visual_hits);
        let size = request_size(&messages);
        let Some(limit) = budget.max_bytes else { break messages };
        if size <= limit {
            break messages;
        }
        // Shed the worst-ranked remaining hit, whichever modality it is in;
        // prefer shedding the image when ranks tie.
        let worst_text = text_hits.last().map(|c| c.hit.rank);
        let worst_visual = visual_hits.last().map(|c| c.hit.rank);
        let dropped = match (worst_text, worst_visual) {
            (Some(t), Some(v)) if t > v => text_hits.pop().map(|c| c.hit.doc_id),
            (Some(_), Some(_)) => visual_hits.pop().map(|c| c.hit.doc_id),
            (Some(_), None) => text_hits.pop().map(|c| c.hit.doc_id),
            (None, Some(_)) => visual_hits.pop().map(|c| c.hit.doc_id),
            (None, None) => {
                return Err(GenerationError::OversizePrompt { size, limit });
            }
        };
        if let Some(doc_id) = dropped {
            log::warn!(
                "prompt for story '{}' over budget ({size} > {limit} bytes); dropping '{doc_id}'",
                story.id
            );
            truncated.push(doc_id);
        }
    };

    Ok(AssembledPrompt {
        request: ChatRequest::new(messages, Sampling::DEFAULT),
        truncated,
    })
}

/// The parsed result of one generation call, with its full dialogue.
#[derive(Debug, Clone)]
pub struct GenerationOutput {
    /// The raw model reply the criteria were parsed from.
    pub raw: String,
    /// The criteria, post-split so every entry has exactly one outcome.
    pub acs: Vec<AcceptanceCriterion>,
    /// Every message exchanged, including any reformat retry.
    pub transcript: Vec<Message>,
    /// Number of reformat retries issued (0 or 1).
    pub retries: usize,
}

/// Call the model with an assembled prompt and parse the reply into atomic
/// criteria.
///
/// The reply must parse as GIVEN/WHEN/THEN criteria; on a parse failure one
/// reformat retry is issued with the failed reply and a corrective
/// instruction appended to the dialogue.  A second failure is an error
/// carrying both raw replies.
pub fn generate_acs(
    provider: &Arc<dyn Provider>,
    prompt: &AssembledPrompt,
    texts: &PromptTexts,
) -> Result<GenerationOutput, GenerationError> {
    let mut messages = prompt.request.messages.clone();
    let sampling = prompt.request.sampling;

    let first = provider.chat(&ChatRequest::new(messages.clone(), sampling))?;
    messages.push(Message::assistant(&first.text));
    match parse_reply(&first.text) {
        Ok(acs) => Ok(GenerationOutput { raw: first.text, acs, transcript: messages, retries: 0 }),
        Err(first_err) => {
            log::warn!("generation reply unparseable ({first_err}); issuing reformat retry");
            messages.push(Message::user(&texts.reformat));
            let second = provider.chat(&ChatRequest::new(messages.clone(), sampling))?;
            messages.push(Message::assistant(&second.text));
            match parse_reply(&second.text) {
                Ok(acs) => Ok(GenerationOutput {
                    raw: second.text,
                    acs,
                    transcript: messages,
                    retries: 1,
                }),
                Err(_) => Err(GenerationError::UnparseableOutput {
                    first_len: first.text.len(),
                    second_len: second.text.len(),
                    first: first.text,
                    second: second.text,
                }),
            }
        }
    }
}

fn parse_reply(raw: &str) -> Result<Vec<AcceptanceCriterion>, crate::corpus::GherkinError> {
    let parsed = parse_gherkin(raw)?;
    Ok(parsed.iter().flat_map(atomicize).collect())
}

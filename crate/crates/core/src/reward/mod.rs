//! Two-level quality scoring and the polishing loop.
//!
//! A judge model grades a story's whole criteria set on a 1–5 scale against
//! a six-dimension rubric (the global level).  When the grade falls below a
//! threshold, each criterion is scored individually by one of two local
//! scorers, the weakest is rewritten by a polisher model inside the original
//! generation dialogue, and the set is re-graded — repeating up to a round
//! limit.  Replacement is in place and non-destructive: the set never grows
//! or shrinks, and untouched entries are returned byte-identical.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::corpus::{atomicize, parse_gherkin, render_criteria, AcceptanceCriterion, UserStory};
use crate::providers::{ChatRequest, Message, Provider, ProviderError, Sampling};

/// The six rubric dimensions a global judgment is asked to address.
pub const RUBRIC_DIMENSIONS: [&str; 6] = [
    "Relevance",
    "Correctness",
    "Understandability",
    "Coverage",
    "Atomicity",
    "Testability",
];

/// Errors from scoring or polishing.
#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    /// The judge reply carried no valid score line even after a reprompt.
    #[error("judge reply carried no score line with an integer 1..=5 (reply was {raw_len} bytes)")]
    UnparseableScore { raw: String, raw_len: usize },

    /// The polisher did not produce a single atomic criterion even after a
    /// reprompt.
    #[error("polish reply did not contain exactly one atomic criterion (reply was {raw_len} bytes)")]
    UnparseablePolish { raw: String, raw_len: usize },

    /// Local scores from different scorers were mixed in one selection.
    #[error("cannot select a minimum across different scorer kinds")]
    MixedScorers,

    /// No scores were supplied.
    #[error("no local scores to select from")]
    EmptyScores,

    /// A local score came back NaN.
    #[error("local score at index {index} is NaN")]
    NanScore { index: usize },

    /// A precondition on the inputs failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration field is out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The underlying provider failed.
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Which local scorer produced a value. Values are only comparable within
/// one kind: the verifier lives on a probability scale in [0, 1], the
/// likelihood surrogate on a mean-log-probability scale at or below 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Yes-probability of an alignment question about the criterion.
    Verifier,
    /// Mean per-token log-probability of the criterion as a continuation of
    /// an objective-framed context.
    Ur3,
}

/// A 1–5 judgment of a whole criteria set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalScore {
    /// Quality level, always in 1..=5.
    pub level: u8,
    /// One note per rubric dimension, in [`RUBRIC_DIMENSIONS`] order; empty
    /// string when the judge did not address a dimension.
    pub dimension_notes: Vec<String>,
    /// The judge's verbatim reply.
    pub raw_judgment: String,
}

/// A per-criterion score from one local scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalScore {
    pub value: f64,
    pub scorer: ScorerKind,
}

/// Polishing knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolishConfig {
    /// Global level at or above which the set is accepted as-is.
    pub threshold: u8,
    /// Maximum number of replacement rounds.
    pub max_rounds: usize,
    /// Which local scorer ranks the criteria within a round.
    pub local_scorer: ScorerKind,
}

impl Default for PolishConfig {
    fn default() -> Self {
        PolishConfig { threshold: 5, max_rounds: 1, local_scorer: ScorerKind::Verifier }
    }
}

impl PolishConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(1..=5).contains(&self.threshold) {
            return Err(RewardError::InvalidConfig(format!(
                "threshold must be in 1..=5, got {}",
                self.threshold
            )));
        }
        if self.max_rounds == 0 {
            return Err(RewardError::InvalidConfig("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// The result of one polishing pass over a story's criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishOutcome {
    /// Final criteria; same length as the input, untouched entries identical.
    pub acs: Vec<AcceptanceCriterion>,
    /// How many replacement rounds actually ran.
    pub rounds_executed: usize,
    /// Index replaced in each round, in order.
    pub replaced_indices: Vec<usize>,
    /// The judgment that triggered (or skipped) polishing.
    pub global_before: GlobalScore,
    /// The judgment after the last round; equals `global_before` when no
    /// round ran.
    pub global_after: GlobalScore,
    /// Every message of the polish dialogue beyond the base generation
    /// dialogue (empty when no round ran).
    pub transcript: Vec<Message>,
}

/// Every piece of scoring/polishing prose, editable as config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardTexts {
    /// Rubric shown to the global judge; describes all six dimensions.
    pub rubric: String,
    /// Grading instruction; must demand a final `Score:` line.
    pub global_instruction: String,
    /// Reprompt issued when the score line is missing or out of range.
    pub score_reprompt: String,
    /// Verifier question; `{story}` and `{criterion}` are substituted.
    pub verifier_question: String,
    /// Likelihood-scorer context framing; `{story}` is substituted and the
    /// criterion text is scored as its continuation.
    pub ur3_context: String,
    /// Polish instruction; `{story}`, `{worst}` and `{others}` are
    /// substituted.
    pub polish_instruction: String,
    /// Reprompt issued when the polish reply is not one atomic criterion.
    pub polish_reprompt: String,
}

impl Default for RewardTexts {
    fn default() -> Self {
        RewardTexts {
            rubric: "Assess the acceptance criteria on six dimensions. \
                     Relevance: each criterion serves the story's goal. \
                     Correctness: behavior is stated accurately. \
                     Understandability: wording is unambiguous. \
                     Coverage: together the criteria span the story's objectives. \
                     Atomicity: each criterion checks exactly one outcome. \
                     Testability: each criterion can be verified mechanically."
                .to_owned(),
            global_instruction: "Grade the acceptance criteria below for the user \
                                 story, against the rubric. Write one line per \
                                 dimension, e.g. 'Relevance: <note>'. Finish with \
                                 a single line of the exact form 'Score: <integer \
                                 from 1 to 5>' giving the overall level."
                .to_owned(),
            score_reprompt: "Your reply did not end with a valid score line. \
                             Reply again and finish with one line of the exact \
                             form 'Score: <integer from 1 to 5>'."
                .to_owned(),
            verifier_question: "User story:\n{story}\n\nAcceptance criterion:\n\
                                {criterion}\n\nDoes this criterion correctly and \
                                testably follow from the user story? Answer yes \
                                or no."
                .to_owned(),
            ur3_context: "A well-written acceptance criterion that advances the \
                          objective of this user story follows.\nUser story:\n\
                          {story}\nAcceptance criterion:\n"
                .to_owned(),
            polish_instruction: "The criteria above were graded below the quality \
                                 bar. The weakest criterion is:\n{worst}\n\nThe \
                                 other criteria, which must stay unchanged, are:\n\
                                 {others}\n\nUser story:\n{story}\n\nRewrite the \
                                 weakest criterion so it is specific, testable, \
                                 and checks exactly one outcome. Reply with \
                                 exactly one improved criterion on a single line \
                                 in the form GIVEN ... WHEN ... THEN ..."
                .to_owned(),
            polish_reprompt: "That reply was not a single valid criterion. Reply \
                              with exactly one improved criterion on one line in \
                              the form GIVEN ... WHEN ... THEN ... and nothing \
                              else."
                .to_owned(),
        }
    }
}

/// Extract the level from a judge reply: the last line tagged `Score:`
/// must end in a standalone integer in 1..=5.
fn parse_level(raw: &str) -> Option<u8> {
    let line = raw
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.to_ascii_lowercase().starts_with("score:"))?;
    let after_tag = &line["score:".len()..];
    let last_number = after_tag
        .split(|c: char| !c.is_ascii_digit())
        .rfind(|s| !s.is_empty())?;
    let value: u32 = last_number.parse().ok()?;
    u8::try_from(value).ok().filter(|v| (1..=5).contains(v))
}

/// Pull one note per rubric dimension out of a judge reply; a dimension the
/// judge skipped yields an empty string.
fn parse_dimension_notes(raw: &str) -> Vec<String> {
    RUBRIC_DIMENSIONS
        .iter()
        .map(|dim| {
            let tag = format!("{}:", dim.to_ascii_lowercase());
            raw.lines()
                .map(str::trim)
                .find(|l| l.to_ascii_lowercase().starts_with(&tag))
                .map(|l| l[tag.len()..].trim().to_owned())
                .unwrap_or_default()
        })
        .collect()
}

/// Ask the judge for a 1–5 level over the whole criteria set.
///
/// One chat call at near-deterministic sampling; if the reply carries no
/// valid score line, one reprompt is issued before failing.
pub fn global_score(
    story: &UserStory,
    acs: &[AcceptanceCriterion],
    judge: &Arc<dyn Provider>,
    texts: &RewardTexts,
) -> Result<GlobalScore, RewardError> {
    if acs.is_empty() {
        return Err(RewardError::InvalidInput("no criteria to grade".into()));
    }
    let prompt = format!(
        "{}\n\n{}\n\nUser story:\n{}\n\nAcceptance criteria:\n{}",
        texts.rubric,
        texts.global_instruction,
        story.query_text(),
        render_criteria(acs)
    );
    let mut messages = vec![Message::user(prompt)];
    let first = judge.chat(&ChatRequest::new(messages.clone(), Sampling::JUDGE))?;
    if let Some(level) = parse_level(&first.text) {
        return Ok(GlobalScore {
            level,
            dimension_notes: parse_dimension_notes(&first.text),
            raw_judgment: first.text,
        });
    }
    log::warn!("global judgment had no valid score line; reprompting");
    messages.push(Message::assistant(&first.text));
    messages.push(Message::user(&texts.score_reprompt));
    let second = judge.chat(&ChatRequest::new(messages, Sampling::JUDGE))?;
    match parse_level(&second.text) {
        Some(level) => Ok(GlobalScore {
            level,
            dimension_notes: parse_dimension_notes(&second.text),
            raw_judgment: second.text,
        }),
        None => Err(RewardError::UnparseableScore {
            raw_len: second.text.len(),
            raw: second.text,
        }),
    }
}

/// Score one criterion with the chosen local scorer.
pub fn local_score(
    story: &UserStory,
    ac: &AcceptanceCriterion,
    scorer: ScorerKind,
    provider: &Arc<dyn Provider>,
    texts: &RewardTexts,
) -> Result<LocalScore, RewardError> {
    if !ac.is_atomic() {
        return Err(RewardError::InvalidInput(
            "local scoring requires an atomic criterion".into(),
        ));
    }
    let value = match scorer {
        ScorerKind::Verifier => {
            let question = texts
                .verifier_question
                .replace("{story}", &story.query_text())
                .replace("{criterion}", &ac.render());
            provider.yes_probability(&question)?
        }
        ScorerKind::Ur3 => {
            let context = texts.ur3_context.replace("{story}", &story.query_text());
            provider.sequence_logprob(&context, &ac.render())?.per_token_mean
        }
    };
    Ok(LocalScore { value, scorer })
}

/// Index of the lowest-valued score; ties go to the lowest index.
///
/// All scores must come from the same scorer kind — the two scales are not
/// comparable.
pub fn select_worst(scores: &[LocalScore]) -> Result<usize, RewardError> {
    let first = scores.first().ok_or(RewardError::EmptyScores)?;
    if scores.iter().any(|s| s.scorer != first.scorer) {
        return Err(RewardError::MixedScorers);
    }
    if let Some(index) = scores.iter().position(|s| s.value.is_nan()) {
        return Err(RewardError::NanScore { index });
    }
    let mut worst = 0;
    for (i, score) in scores.iter().enumerate().skip(1) {
        if score.value < scores[worst].value {
            worst = i;
        }
    }
    Ok(worst)
}

/// The model trio and shared state one polishing pass works with.
pub struct PolishContext<'a> {
    /// Grades the whole set.
    pub judge: &'a Arc<dyn Provider>,
    /// Scores individual criteria.
    pub scorer: &'a Arc<dyn Provider>,
    /// Rewrites the weakest criterion.
    pub polisher: &'a Arc<dyn Provider>,
    /// The generation dialogue the polish turns are appended to, so each
    /// rewrite sees how the criteria came to be.
    pub base_dialogue: &'a [Message],
    pub texts: &'a RewardTexts,
}

/// Ask the polisher for a replacement; the reply must parse to exactly one
/// atomic criterion. One reprompt on failure.
fn request_replacement(
    ctx: &PolishContext<'_>,
    dialogue: &mut Vec<Message>,
    instruction: String,
) -> Result<AcceptanceCriterion, RewardError> {
    dialogue.push(Message::user(instruction));
    let first = ctx
        .polisher
        .chat(&ChatRequest::new(dialogue.clone(), Sampling::DEFAULT))?;
    dialogue.push(Message::assistant(&first.text));
    if let Some(ac) = parse_single_atomic(&first.text) {
        return Ok(ac);
    }
    log::warn!("polish reply was not one atomic criterion; reprompting");
    dialogue.push(Message::user(&ctx.texts.polish_reprompt));
    let second = ctx
        .polisher
        .chat(&ChatRequest::new(dialogue.clone(), Sampling::DEFAULT))?;
    dialogue.push(Message::assistant(&second.text));
    parse_single_atomic(&second.text).ok_or(RewardError::UnparseablePolish {
        raw_len: second.text.len(),
        raw: second.text,
    })
}

fn parse_single_atomic(raw: &str) -> Option<AcceptanceCriterion> {
    let parsed = parse_gherkin(raw).ok()?;
    let atomic: Vec<AcceptanceCriterion> = parsed.iter().flat_map(atomicize).collect();
    match atomic.as_slice() {
        [single] => Some(single.clone()),
        _ => None,
    }
}

/// Grade the set and, while it falls short, replace its weakest criterion.
///
/// When the initial grade meets `cfg.threshold` the input is returned
/// untouched with zero rounds and no scorer or polisher calls.  Otherwise
/// each round scores all criteria locally, rewrites the weakest inside the
/// generation dialogue, replaces it in place, and re-grades — stopping when
/// the grade meets the threshold or `cfg.max_rounds` rounds have run.  The
/// judge is consulted exactly `1 + rounds_executed` times.
pub fn polish(
    story: &UserStory,
    acs: &[AcceptanceCriterion],
    cfg: &PolishConfig,
    ctx: &PolishContext<'_>,
) -> Result<PolishOutcome, RewardError> {
    cfg.validate()?;
    if acs.is_empty() {
        return Err(RewardError::InvalidInput("no criteria to polish".into()));
    }
    if let Some(bad) = acs.iter().find(|ac| !ac.is_atomic()) {
        return Err(RewardError::InvalidInput(format!(
            "criterion '{}' is not atomic",
            bad.render()
        )));
    }

    let global_before = global_score(story, acs, ctx.judge, ctx.texts)?;
    if global_before.level >= cfg.threshold {
        return Ok(PolishOutcome {
            acs: acs.to_vec(),
            rounds_executed: 0,
            replaced_indices: Vec::new(),
            global_before: global_before.clone(),
            global_after: global_before,
            transcript: Vec::new(),
        });
    }

    let mut acs = acs.to_vec();
    let mut dialogue: Vec<Message> = ctx.base_dialogue.to_vec();
    let base_len = dialogue.len();
    let mut replaced_indices = Vec::new();
    let mut global_after = global_before.clone();
    let mut rounds_executed = 0;

    for _ in 1..=cfg.max_rounds {
        let mut scores = Vec::with_capacity(acs.len());
        for ac in &acs {
            scores.push(local_score(story, ac, cfg.local_scorer, ctx.scorer, ctx.texts)?);
        }
        let worst = select_worst(&scores)?;

        let others = acs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != worst)
            .map(|(_, ac)| ac.render())
            .collect::<Vec<_>>()
            .join("\n");
        let instruction = ctx
            .texts
            .polish_instruction
            .replace("{story}", &story.query_text())
            .replace("{worst}", &acs[worst].render())
            .replace("{others}", if others.is_empty() { "(none)" } else { &others });

        let replacement = request_replacement(ctx, &mut dialogue, instruction)?;
        acs[worst] = replacement;
        replaced_indices.push(worst);
        rounds_executed += 1;

        global_after = global_score(story, &acs, ctx.judge, ctx.texts)?;
        if global_after.level >= cfg.threshold {
            break;
        }
    }

    Ok(PolishOutcome {
        acs,
        rounds_executed,
        replaced_indices,
        global_before,
        global_after,
        transcript: dialogue.split_off(base_len),
    })
}

//! The three-judge coverage protocol and pairwise comparison.
//!
//! Each ground-truth testing objective is shown, with the story and the
//! generated criteria, to three independent judge models that each return
//! a coverage level.  An objective counts as a hit when every judge sees at
//! least partial coverage, and as correct when every judge sees full
//! coverage.  Accuracy is reported both pooled over objectives (point) and
//! averaged per story (case).  All judge calls run at near-deterministic
//! sampling regardless of the backing provider's defaults.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{render_criteria, AcceptanceCriterion, GroundTruthObjective, UserStory};
use crate::providers::{ChatRequest, Message, Provider, Sampling};

/// How fully a set of criteria covers one testing objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Full,
    Partial,
    Not,
}

/// One judge's coverage call for one objective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub objective_id: String,
    pub judge_id: String,
    pub coverage: Coverage,
}

/// One judge: a stable id and the model behind it.
#[derive(Clone)]
pub struct Judge {
    pub id: String,
    pub provider: Arc<dyn Provider>,
}

impl Judge {
    pub fn new(id: impl Into<String>, provider: Arc<dyn Provider>) -> Self {
        Judge { id: id.into(), provider }
    }
}

/// Exactly three judges with distinct ids.
#[derive(Clone)]
pub struct JudgePanel {
    judges: Vec<Judge>,
}

impl JudgePanel {
    pub fn new(judges: Vec<Judge>) -> Result<Self, EvalError> {
        if judges.len() != 3 {
            return Err(EvalError::PanelSize { got: judges.len() });
        }
        for (i, judge) in judges.iter().enumerate() {
            if judges[..i].iter().any(|other| other.id == judge.id) {
                return Err(EvalError::DuplicateJudge { id: judge.id.clone() });
            }
        }
        Ok(JudgePanel { judges })
    }

    pub fn judges(&self) -> &[Judge] {
        &self.judges
    }
}

/// Prose used by the judge protocols, editable as config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalTexts {
    /// Defines the three coverage levels and demands a tagged answer line.
    pub coverage_rubric: String,
    /// Reprompt when the coverage line is missing or unrecognizable.
    pub coverage_reprompt: String,
    /// Pairwise comparison instruction; demands a tagged preference line.
    pub preference_instruction: String,
    /// Reprompt when the preference line is missing or unrecognizable.
    pub preference_reprompt: String,
}

impl Default for EvalTexts {
    fn default() -> Self {
        EvalTexts {
            coverage_rubric: "Judge how well the acceptance criteria below cover \
                              one testing objective. Full coverage: some \
                              criterion checks the objective completely. Partial \
                              coverage: the objective is addressed but not fully \
                              checked. Not covered: no criterion addresses it. \
                              Finish with one line of the exact form 'Coverage: \
                              Full', 'Coverage: Partial', or 'Coverage: Not'."
                .to_owned(),
            coverage_reprompt: "Your reply did not contain a valid coverage line. \
                                Reply again and finish with exactly one line: \
                                'Coverage: Full', 'Coverage: Partial', or \
                                'Coverage: Not'."
                .to_owned(),
            preference_instruction: "Two sets of acceptance criteria for the same \
                                     user story follow, labeled A and B. Decide \
                                     which set is better overall (more relevant, \
                                     correct, understandable, complete, atomic, \
                                     and testable). Finish with one line of the \
                                     exact form 'Preference: A', 'Preference: B', \
                                     or 'Preference: Tie'."
                .to_owned(),
            preference_reprompt: "Your reply did not contain a valid preference \
                                  line. Reply again and finish with exactly one \
                                  line: 'Preference: A', 'Preference: B', or \
                                  'Preference: Tie'."
                .to_owned(),
        }
    }
}

fn parse_tagged<T>(
    raw: &str,
    tag: &str,
    parse_value: impl Fn(&str) -> Option<T>,
) -> Option<T> {
    raw.lines()
        .rev()
        .map(str::trim)
        .find(|line| line.to_ascii_lowercase().starts_with(tag))
        .and_then(|line| parse_value(line[tag.len()..].trim()))
}

fn parse_coverage(raw: &str) -> Option<Coverage> {
    parse_tagged(raw, "coverage:", |value| {
        let value = value.to_ascii_lowercase();
        if value.starts_with("full") {
            Some(Coverage::Full)
        } else if value.starts_with("partial") {
            Some(Coverage::Partial)
        } else if value.starts_with("not") {
            Some(Coverage::Not)
        } else {
            None
        }
    })
}

/// Ask one judge a question at forced near-deterministic sampling, with one
/// reprompt when the first reply fails to parse.
fn ask_with_reprompt<T>(
    judge: &Judge,
    prompt: String,
    reprompt: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Result<T, String>, EvalError> {
    let mut messages = vec![Message::user(prompt)];
    let first = judge
        .provider
        .chat(&ChatRequest::new(messages.clone(), Sampling::JUDGE))?;
    if let Some(value) = parse(&first.text) {
        return Ok(Ok(value));
    }
    log::warn!("judge '{}' reply unparseable; reprompting", judge.id);
    messages.push(Message::assistant(&first.text));
    messages.push(Message::user(reprompt));
    let second = judge
        .provider
        .chat(&ChatRequest::new(messages, Sampling::JUDGE))?;
    match parse(&second.text) {
        Some(value) => Ok(Ok(value)),
        None => Ok(Err(second.text)),
    }
}

/// Collect one coverage verdict per judge for a single objective.
pub fn judge_objective(
    objective: &GroundTruthObjective,
    generated_acs: &[AcceptanceCriterion],
    story: &UserStory,
    panel: &JudgePanel,
    texts: &EvalTexts,
) -> Result<Vec<JudgeVerdict>, EvalError> {
    let prompt = format!(
        "{}\n\nUser story:\n{}\n\nAcceptance criteria:\n{}\n\nTesting objective:\n{}",
        texts.coverage_rubric,
        story.query_text(),
        render_criteria(generated_acs),
        objective.text,
    );
    let mut verdicts = Vec::with_capacity(3);
    for judge in panel.judges() {
        let outcome = ask_with_reprompt(
            judge,
            prompt.clone(),
            &texts.coverage_reprompt,
            parse_coverage,
        )?;
        match outcome {
            Ok(coverage) => verdicts.push(JudgeVerdict {
                objective_id: objective.id.clone(),
                judge_id: judge.id.clone(),
                coverage,
            }),
            Err(raw) => {
                return Err(EvalError::UnparseableVerdict {
                    judge_id: judge.id.clone(),
                    raw_len: raw.len(),
                    raw,
                })
            }
        }
    }
    Ok(verdicts)
}

/// Hit/correct accuracy for one story.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoryAccuracy {
    pub objectives: usize,
    pub hit: f64,
    pub cor: f64,
}

/// The aggregated result of the coverage protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Pooled over all objectives.
    pub hit_point: f64,
    pub cor_point: f64,
    /// Unweighted mean of the per-story values.
    pub hit_case: f64,
    pub cor_case: f64,
    pub per_story: BTreeMap<String, StoryAccuracy>,
}

/// Fold a complete verdict matrix into hit/correct accuracies.
///
/// An objective is a hit when all three judges saw at least partial
/// coverage, and correct when all three saw full coverage.  Point accuracy
/// pools objectives; case accuracy averages per-story accuracies with equal
/// story weight.  Every objective needs exactly one verdict from each of
/// exactly three distinct judges; stories listed with no objectives are
/// skipped in the case average.
pub fn accuracy_report(
    verdicts: &[JudgeVerdict],
    objectives_by_story: &BTreeMap<String, Vec<String>>,
) -> Result<AccuracyReport, EvalError> {
    let mut by_objective: BTreeMap<&str, BTreeMap<&str, Coverage>> = BTreeMap::new();
    for verdict in verdicts {
        let slot = by_objective
            .entry(&verdict.objective_id)
            .or_default()
            .insert(&verdict.judge_id, verdict.coverage);
        if slot.is_some() {
            return Err(EvalError::IncompleteVerdicts {
                detail: format!(
                    "duplicate verdict for objective '{}' from judge '{}'",
                    verdict.objective_id, verdict.judge_id
                ),
            });
        }
    }

    let known: std::collections::BTreeSet<&str> = objectives_by_story
        .values()
        .flatten()
        .map(String::as_str)
        .collect();
    for objective_id in by_objective.keys() {
        if !known.contains(objective_id) {
            return Err(EvalError::IncompleteVerdicts {
                detail: format!("verdicts for unknown objective '{objective_id}'"),
            });
        }
    }

    let mut total = 0usize;
    let mut total_hits = 0usize;
    let mut total_correct = 0usize;
    let mut per_story = BTreeMap::new();
    for (story_id, objective_ids) in objectives_by_story {
        let mut hits = 0usize;
        let mut correct = 0usize;
        for objective_id in objective_ids {
            let judged = by_objective.get(objective_id.as_str()).ok_or_else(|| {
                EvalError::IncompleteVerdicts {
                    detail: format!("no verdicts for objective '{objective_id}'"),
                }
            })?;
            if judged.len() != 3 {
                return Err(EvalError::IncompleteVerdicts {
                    detail: format!(
                        "objective '{}' has {} verdicts, expected 3",
                        objective_id,
                        judged.len()
                    ),
                });
            }
            let coverages: Vec<Coverage> = judged.values().copied().collect();
            if coverages.iter().all(|c| *c != Coverage::Not) {
                hits += 1;
            }
            if coverages.iter().all(|c| *c == Coverage::Full) {
                correct += 1;
            }
        }
        total += objective_ids.len();
        total_hits += hits;
        total_correct += correct;
        if !objective_ids.is_empty() {
            per_story.insert(
                story_id.clone(),
                StoryAccuracy {
                    objectives: objective_ids.len(),
                    hit: hits as f64 / objective_ids.len() as f64,
                    cor: correct as f64 / objective_ids.len() as f64,
                },
            );
        }
    }
    if total == 0 {
        return Err(EvalError::IncompleteVerdicts { detail: "no objectives supplied".into() });
    }

    let stories = per_story.len() as f64;
    Ok(AccuracyReport {
        hit_point: total_hits as f64 / total as f64,
        cor_point: total_correct as f64 / total as f64,
        hit_case: per_story.values().map(|s| s.hit).sum::<f64>() / stories,
        cor_case: per_story.values().map(|s| s.cor).sum::<f64>() / stories,
        per_story,
    })
}

/// One judge's pick in the pairwise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Original,
    Polished,
    Tie,
}

/// One judge's vote, with the id for the audit trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceVote {
    pub judge_id: String,
    pub preference: Preference,
}

/// The panel's pairwise decision for one story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareResult {
    pub story_id: String,
    /// True only when every judge prefers the polished set; a tie anywhere
    /// defeats unanimity.
    pub unanimous_better: bool,
    pub votes: Vec<PreferenceVote>,
}

/// Ask the panel whether polishing improved a story's criteria.
///
/// To counter position bias, the original/polished sets swap the A/B labels
/// for every odd-indexed judge; votes are mapped back before aggregation.
pub fn compare_polish(
    story: &UserStory,
    original_acs: &[AcceptanceCriterion],
    polished_acs: &[AcceptanceCriterion],
    panel: &JudgePanel,
    texts: &EvalTexts,
) -> Result<CompareResult, EvalError> {
    let mut votes = Vec::with_capacity(3);
    for (index, judge) in panel.judges().iter().enumerate() {
        let swapped = index % 2 == 1;
        let (set_a, set_b) = if swapped {
            (polished_acs, original_acs)
        } else {
            (original_acs, polished_acs)
        };
        let prompt = format!(
            "{}\n\nUser story:\n{}\n\nOption A:\n{}\n\nOption B:\n{}",
            texts.preference_instruction,
            story.query_text(),
            render_criteria(set_a),
            render_criteria(set_b),
        );
        let outcome = ask_with_reprompt(
            judge,
            prompt,
            &texts.preference_reprompt,
            |raw| {
                parse_tagged(raw, "preference:", |value| {
                    match value.to_ascii_lowercase().as_str() {
                        v if v.starts_with("tie") => Some(Preference::Tie),
                        v if v.starts_with('a') => Some(if swapped {
                            Preference::Polished
                        } else {
                            Preference::Original
                        }),
                        v if v.starts_with('b') => Some(if swapped {
                            Preference::Original
                        } else {
                            Preference::Polished
                        }),
                        _ => None,
                    }
                })
            },
        )?;
        match outcome {
            Ok(preference) => votes.push(PreferenceVote { judge_id: judge.id.clone(), preference }),
            Err(raw) => {
                return Err(EvalError::UnparseablePreference {
                    judge_id: judge.id.clone(),
                    raw_len: raw.len(),
                    raw,
                })
            }
        }
    }
    Ok(CompareResult {
        story_id: story.id.clone(),
        unanimous_better: votes.iter().all(|v| v.preference == Preference::Polished),
        votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{CallOp, ChatResponse, MockProvider};

    fn story() -> UserStory {
        UserStory {
            id: "s1".to_owned(),
            title: "Search".to_owned(),
            narrative: "As a visitor, I want to search, so that I find pages.".to_owned(),
            extensions: vec![],
        }
    }

    fn objective(id: &str) -> GroundTruthObjective {
        GroundTruthObjective {
            id: id.to_owned(),
            story_id: "s1".to_owned(),
            text: format!("objective {id}"),
        }
    }

    fn ac() -> AcceptanceCriterion {
        AcceptanceCriterion::from_parts(
            vec!["a page".to_owned()],
            vec!["searching".to_owned()],
            vec!["results show".to_owned()],
        )
    }

    struct Panel {
        mocks: Vec<std::sync::Arc<MockProvider>>,
        panel: JudgePanel,
    }

    fn scripted_panel(replies: [&[&str]; 3]) -> Panel {
        let mut mocks = Vec::new();
        let mut judges = Vec::new();
        for (i, judge_replies) in replies.iter().enumerate() {
            let mock = std::sync::Arc::new(MockProvider::new().with_label(format!("j{i}")));
            for reply in *judge_replies {
                mock.push_chat(ChatResponse::new(*reply));
            }
            judges.push(Judge::new(format!("judge-{i}"), mock.clone() as Arc<dyn Provider>));
            mocks.push(mock);
        }
        Panel { panel: JudgePanel::new(judges).unwrap(), mocks }
    }

    fn verdict(objective_id: &str, judge_id: &str, coverage: Coverage) -> JudgeVerdict {
        JudgeVerdict {
            objective_id: objective_id.to_owned(),
            judge_id: judge_id.to_owned(),
            coverage,
        }
    }

    /// Three verdicts, one per judge, with the given coverages.
    fn triple(objective_id: &str, coverages: [Coverage; 3]) -> Vec<JudgeVerdict> {
        coverages
            .iter()
            .enumerate()
            .map(|(i, c)| verdict(objective_id, &format!("judge-{i}"), *c))
            .collect()
    }

    #[test]
    fn panel_must_have_exactly_three_distinct_judges() {
        let mk = || {
            Judge::new("same", Arc::new(MockProvider::new()) as Arc<dyn Provider>)
        };
        assert!(matches!(
            JudgePanel::new(vec![mk(), mk()]),
            Err(EvalError::PanelSize { got: 2 })
        ));
        assert!(matches!(
            JudgePanel::new(vec![mk(), mk(), mk()]),
            Err(EvalError::DuplicateJudge { .. })
        ));
    }

    #[test]
    fn three_scripted_verdicts_come_back_verbatim() {
        let p = scripted_panel([
            &["Coverage: Full"],
            &["Coverage: Partial"],
            &["Coverage: Full"],
        ]);
        let verdicts = judge_objective(
            &objective("o1"),
            &[ac()],
            &story(),
            &p.panel,
            &EvalTexts::default(),
        )
        .unwrap();
        assert_eq!(verdicts.len(), 3);
        assert_eq!(verdicts[0].coverage, Coverage::Full);
        assert_eq!(verdicts[1].coverage, Coverage::Partial);
        assert_eq!(verdicts[2].coverage, Coverage::Full);
        assert_eq!(verdicts[0].judge_id, "judge-0");
        // No aggregation happened here.
        for mock in &p.mocks {
            assert_eq!(mock.count(CallOp::Chat), 1);
        }
    }

    #[test]
    fn unparseable_verdict_reprompts_then_errors() {
        let p = scripted_panel([
            &["maybe", "maybe again"],
            &["Coverage: Full"],
            &["Coverage: Full"],
        ]);
        let err = judge_objective(
            &objective("o1"),
            &[ac()],
            &story(),
            &p.panel,
            &EvalTexts::default(),
        )
        .unwrap_err();
        match err {
            EvalError::UnparseableVerdict { judge_id, .. } => assert_eq!(judge_id, "judge-0"),
            other => panic!("expected UnparseableVerdict, got {other:?}"),
        }
        assert_eq!(p.mocks[0].count(CallOp::Chat), 2);
    }

    #[test]
    fn verdict_reprompt_recovers() {
        let p = scripted_panel([
            &["hmm", "Coverage: Not"],
            &["Coverage: Full"],
            &["Coverage: Full"],
        ]);
        let verdicts = judge_objective(
            &objective("o1"),
            &[ac()],
            &story(),
            &p.panel,
            &EvalTexts::default(),
        )
        .unwrap();
        assert_eq!(verdicts[0].coverage, Coverage::Not);
    }

    #[test]
    fn accuracy_example_separates_case_from_point() {
        // Story A: its 1 objective correct by all judges. Story B: 1 of 3
        // objectives correct, others partial-hit only.
        let mut verdicts = triple("a1", [Coverage::Full, Coverage::Full, Coverage::Full]);
        verdicts.extend(triple("b1", [Coverage::Full, Coverage::Full, Coverage::Full]));
        verdicts.extend(triple("b2", [Coverage::Full, Coverage::Partial, Coverage::Full]));
        verdicts.extend(triple("b3", [Coverage::Partial, Coverage::Partial, Coverage::Full]));
        let mut objectives = BTreeMap::new();
        objectives.insert("storyA".to_owned(), vec!["a1".to_owned()]);
        objectives.insert(
            "storyB".to_owned(),
            vec!["b1".to_owned(), "b2".to_owned(), "b3".to_owned()],
        );

        let report = accuracy_report(&verdicts, &objectives).unwrap();
        assert!((report.cor_point - 0.5).abs() < 1e-9);
        assert!((report.cor_case - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-9);
        assert!((report.cor_case - 0.66667).abs() < 1e-5);
        // Everything was at least partial everywhere.
        assert!((report.hit_point - 1.0).abs() < 1e-12);
        assert!((report.hit_case - 1.0).abs() < 1e-12);
        assert_eq!(report.per_story.len(), 2);
        assert_eq!(report.per_story["storyB"].objectives, 3);
    }

    #[test]
    fn one_not_verdict_defeats_both_hit_and_correct() {
        let verdicts = triple("o1", [Coverage::Full, Coverage::Full, Coverage::Not]);
        let mut objectives = BTreeMap::new();
        objectives.insert("s1".to_owned(), vec!["o1".to_owned()]);
        let report = accuracy_report(&verdicts, &objectives).unwrap();
        assert_eq!(report.hit_point, 0.0);
        assert_eq!(report.cor_point, 0.0);
    }

    #[test]
    fn full_everywhere_saturates_all_accuracies() {
        let mut verdicts = triple("o1", [Coverage::Full, Coverage::Full, Coverage::Full]);
        verdicts.extend(triple("o2", [Coverage::Full, Coverage::Full, Coverage::Full]));
        let mut objectives = BTreeMap::new();
        objectives.insert("s1".to_owned(), vec!["o1".to_owned(), "o2".to_owned()]);
        let report = accuracy_report(&verdicts, &objectives).unwrap();
        assert_eq!(report.hit_point, 1.0);
        assert_eq!(report.cor_point, 1.0);
        assert_eq!(report.hit_case, 1.0);
        assert_eq!(report.cor_case, 1.0);
    }

    #[test]
    fn correct_never_exceeds_hit() {
        let mut verdicts = triple("o1", [Coverage::Full, Coverage::Partial, Coverage::Full]);
        verdicts.extend(triple("o2", [Coverage::Not, Coverage::Full, Coverage::Full]));
        verdicts.extend(triple("o3", [Coverage::Full, Coverage::Full, Coverage::Full]));
        let mut objectives = BTreeMap::new();
        objectives.insert("s1".to_owned(), vec!["o1".to_owned(), "o2".to_owned()]);
        objectives.insert("s2".to_owned(), vec!["o3".to_owned()]);
        let report = accuracy_report(&verdicts, &objectives).unwrap();
        assert!(report.cor_point <= report.hit_point);
        assert!(report.cor_case <= report.hit_case);
    }

    #[test]
    fn missing_or_duplicate_verdicts_are_rejected() {
        let mut objectives = BTreeMap::new();
        objectives.insert("s1".to_owned(), vec!["o1".to_owned()]);

        // Two verdicts only.
        let two = vec![
            verdict("o1", "judge-0", Coverage::Full),
            verdict("o1", "judge-1", Coverage::Full),
        ];
        assert!(matches!(
            accuracy_report(&two, &objectives),
            Err(EvalError::IncompleteVerdicts { .. })
        ));

        // Same judge twice.
        let dup = vec![
            verdict("o1", "judge-0", Coverage::Full),
            verdict("o1", "judge-0", Coverage::Full),
            verdict("o1", "judge-1", Coverage::Full),
        ];
        assert!(matches!(
            accuracy_report(&dup, &objectives),
            Err(EvalError::IncompleteVerdicts { .. })
        ));

        // Verdicts for an objective no story owns.
        let stray = triple("ghost", [Coverage::Full, Coverage::Full, Coverage::Full]);
        assert!(matches!(
            accuracy_report(&stray, &objectives),
            Err(EvalError::IncompleteVerdicts { .. })
        ));
    }

    #[test]
    fn unanimous_preference_for_polished() {
        // Judge 1 sees swapped labels, so its "A" means polished.
        let p = scripted_panel([
            &["Preference: B"],
            &["Preference: A"],
            &["Preference: B"],
        ]);
        let result = compare_polish(
            &story(),
            &[ac()],
            &[ac()],
            &p.panel,
            &EvalTexts::default(),
        )
        .unwrap();
        assert!(result.unanimous_better);
        assert_eq!(result.votes.len(), 3);
        assert!(result.votes.iter().all(|v| v.preference == Preference::Polished));
    }

    #[test]
    fn position_swap_maps_votes_back() {
        // All three literally answer "A" — judges 0 and 2 mean the
        // original, judge 1 means the polished set.
        let p = scripted_panel([
            &["Preference: A"],
            &["Preference: A"],
            &["Preference: A"],
        ]);
        let result = compare_polish(
            &story(),
            &[ac()],
            &[ac()],
            &p.panel,
            &EvalTexts::default(),
        )
        .unwrap();
        assert!(!result.unanimous_better);
        assert_eq!(result.votes[0].preference, Preference::Original);
        assert_eq!(result.votes[1].preference, Preference::Polished);
        assert_eq!(result.votes[2].preference, Preference::Original);
    }

    #[test]
    fn one_dissent_or_tie_defeats_unanimity() {
        let dissent = scripted_panel([
            &["Preference: B"],
            &["Preference: B"], // swapped: means original
            &["Preference: B"],
        ]);
        let result = compare_polish(
            &story(),
            &[ac()],
            &[ac()],
            &dissent.panel,
            &EvalTexts::default(),
        )
        .unwrap();
        assert!(!result.unanimous_better);

        let tied = scripted_panel([
            &["Preference: B"],
            &["Preference: Tie"],
            &["Preference: B"],
        ]);
        let result = compare_polish(
            &story(),
            &[ac()],
            &[ac()],
            &tied.panel,
            &EvalTexts::default(),
        )
        .unwrap();
        assert!(!result.unanimous_better);
        assert_eq!(result.votes[1].preference, Preference::Tie);
    }

    #[test]
    fn unparseable_preference_reprompts_then_errors() {
        let p = scripted_panel([
            &["Preference: B"],
            &["i like both", "both are fine"],
            &["Preference: B"],
        ]);
        let err = compare_polish(
            &story(),
            &[ac()],
            &[ac()],
            &p.panel,
            &EvalTexts::default(),
        )
        .unwrap_err();
        match err {
            EvalError::UnparseablePreference { judge_id, .. } => {
                assert_eq!(judge_id, "judge-1")
            }
            other => panic!("expected UnparseablePreference, got {other:?}"),
        }
    }

    #[test]
    fn judge_sampling_is_forced_near_deterministic() {
        // Route one judge through a recording cache and inspect the stored
        // request: whatever the provider's own defaults, the protocol must
        // have sent temperature 0 and top_p 0.1.
        let dir = tempfile::tempdir().unwrap();
        let inner = std::sync::Arc::new(MockProvider::new());
        inner.push_chat(ChatResponse::new("Coverage: Full"));
        let recording: Arc<dyn Provider> = Arc::new(
            crate::providers::ReplayProvider::record(inner as Arc<dyn Provider>, dir.path())
                .unwrap(),
        );
        let other = || {
            let mock = std::sync::Arc::new(MockProvider::new());
            mock.push_chat(ChatResponse::new("Coverage: Full"));
            mock as Arc<dyn Provider>
        };
        let panel = JudgePanel::new(vec![
            Judge::new("j0", recording),
            Judge::new("j1", other()),
            Judge::new("j2", other()),
        ])
        .unwrap();
        judge_objective(&objective("o1"), &[ac()], &story(), &panel, &EvalTexts::default())
            .unwrap();

        let records: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        assert_eq!(records.len(), 1);
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&records[0]).unwrap()).unwrap();
        let sampling = &value["request"]["request"]["sampling"];
        assert_eq!(sampling["temperature"], 0.0);
        assert_eq!(sampling["top_p"], 0.1);
    }
}

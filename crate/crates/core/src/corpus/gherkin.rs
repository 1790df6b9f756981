//! Parsing and rendering of GIVEN/WHEN/THEN acceptance criteria.
//!
//! The dialect is deliberately small so that model output can be checked
//! strictly:
//!
//! - keywords are GIVEN, WHEN, THEN, AND, BUT, matched case-insensitively as
//!   standalone words (a trailing `:` or `,` on the keyword is tolerated);
//! - every new GIVEN starts a new criterion;
//! - AND/BUT append another clause to the section they appear in;
//! - within one criterion the sections must appear in GIVEN, WHEN, THEN
//!   order (repeating a section keyword, e.g. a second THEN, continues it);
//! - text before the first GIVEN (prose preamble) is ignored, and leading
//!   list markers (`-`, `*`, `1.`) are stripped per line so bulleted model
//!   output parses cleanly.

use thiserror::Error;

use super::AcceptanceCriterion;

/// Why a block of text failed to parse as acceptance criteria.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GherkinError {
    /// The input contained no text at all.
    #[error("empty input: no text to parse")]
    EmptyInput,
    /// A required keyword was missing or out of order.
    #[error("missing keyword in criterion {criterion}: {detail}")]
    MissingKeyword { criterion: usize, detail: String },
    /// A keyword was present but its clause text was empty.
    #[error("empty {keyword} clause in criterion {criterion}")]
    EmptyClause { criterion: usize, keyword: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Keyword {
    Given,
    When,
    Then,
    And,
    But,
}

fn keyword_of(word: &str) -> Option<Keyword> {
    let trimmed = word.trim_end_matches([':', ',']);
    match trimmed.to_ascii_lowercase().as_str() {
        "given" => Some(Keyword::Given),
        "when" => Some(Keyword::When),
        "then" => Some(Keyword::Then),
        "and" => Some(Keyword::And),
        "but" => Some(Keyword::But),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Given,
    When,
    Then,
}

impl Section {
    fn keyword_name(self) -> &'static str {
        match self {
            Section::Given => "GIVEN",
            Section::When => "WHEN",
            Section::Then => "THEN",
        }
    }
}

/// One criterion being accumulated by the parser.
struct Partial {
    given: Vec<String>,
    when: Vec<String>,
    then: Vec<String>,
    /// Original words spanned by this criterion, for the `raw` field.
    span: Vec<String>,
    section: Section,
    clause: Vec<String>,
}

impl Partial {
    fn new() -> Self {
        Partial {
            given: Vec::new(),
            when: Vec::new(),
            then: Vec::new(),
            span: Vec::new(),
            section: Section::Given,
            clause: Vec::new(),
        }
    }

    /// Moves the pending clause words into the current section.
    fn flush_clause(&mut self, index: usize) -> Result<(), GherkinError> {
        if self.clause.is_empty() {
            return Err(GherkinError::EmptyClause {
                criterion: index,
                keyword: self.section.keyword_name(),
            });
        }
        let text = self.clause.join(" ");
        self.clause.clear();
        match self.section {
            Section::Given => self.given.push(text),
            Section::When => self.when.push(text),
            Section::Then => self.then.push(text),
        }
        Ok(())
    }

    fn finish(mut self, index: usize) -> Result<AcceptanceCriterion, GherkinError> {
        self.flush_clause(index)?;
        if self.when.is_empty() {
            return Err(GherkinError::MissingKeyword {
                criterion: index,
                detail: "no WHEN before the criterion ended".into(),
            });
        }
        if self.then.is_empty() {
            return Err(GherkinError::MissingKeyword {
                criterion: index,
                detail: "no THEN before the criterion ended".into(),
            });
        }
        Ok(AcceptanceCriterion {
            given: self.given,
            when: self.when,
            then: self.then,
            raw: self.span.join(" "),
        })
    }
}

/// Strips a leading list marker (`-`, `*`, `•`, or `1.`-style numbering)
/// from one line.
fn strip_list_marker(line: &str) -> &str {
    let trimmed = line.trim_start();
    if let Some(rest) = trimmed
        .strip_prefix('-')
        .or_else(|| trimmed.strip_prefix('*'))
        .or_else(|| trimmed.strip_prefix('•'))
    {
        return rest.trim_start();
    }
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = trimmed[digits..].strip_prefix('.') {
            return rest.trim_start();
        }
    }
    trimmed
}

/// Parses a block of text into acceptance criteria.
///
/// Multiple criteria are split at each new GIVEN. Whitespace inside clauses
/// is collapsed to single spaces. Returns at least one criterion on success;
/// every returned criterion has non-empty given/when/then lists.
pub fn parse_gherkin(text: &str) -> Result<Vec<AcceptanceCriterion>, GherkinError> {
    if text.trim().is_empty() {
        return Err(GherkinError::EmptyInput);
    }

    let words = text
        .lines()
        .map(strip_list_marker)
        .flat_map(str::split_whitespace);

    let mut criteria: Vec<AcceptanceCriterion> = Vec::new();
    let mut current: Option<Partial> = None;

    for word in words {
        let index = criteria.len() + 1;
        match (keyword_of(word), current.as_mut()) {
            (Some(Keyword::Given), Some(partial)) => {
                let done = std::mem::replace(partial, Partial::new());
                criteria.push(done.finish(index)?);
                current.as_mut().expect("replaced in place").span.push(word.to_owned());
            }
            (Some(Keyword::Given), None) => {
                let mut partial = Partial::new();
                partial.span.push(word.to_owned());
                current = Some(partial);
            }
            (Some(kw @ (Keyword::When | Keyword::Then)), Some(partial)) => {
                let target = if kw == Keyword::When { Section::When } else { Section::Then };
                let order_ok = match target {
                    Section::When => partial.section <= Section::When,
                    Section::Then => partial.section >= Section::When,
                    Section::Given => unreachable!(),
                };
                if !order_ok {
                    return Err(GherkinError::MissingKeyword {
                        criterion: index,
                        detail: format!(
                            "{} may not follow {}; start a new criterion with GIVEN",
                            target.keyword_name(),
                            partial.section.keyword_name()
                        ),
                    });
                }
                partial.flush_clause(index)?;
                partial.section = target;
                partial.span.push(word.to_owned());
            }
            (Some(Keyword::And | Keyword::But), Some(partial)) => {
                partial.flush_clause(index)?;
                partial.span.push(word.to_owned());
            }
            (_, Some(partial)) => {
                partial.clause.push(word.to_owned());
                partial.span.push(word.to_owned());
            }
            // Anything before the first GIVEN is preamble and is dropped.
            (_, None) => {}
        }
    }

    match current {
        Some(partial) => {
            let index = criteria.len() + 1;
            criteria.push(partial.finish(index)?);
            Ok(criteria)
        }
        None => Err(GherkinError::MissingKeyword {
            criterion: 1,
            detail: "no GIVEN found in the input".into(),
        }),
    }
}

/// Splits a criterion into atomic ones: one output criterion per THEN
/// clause, each duplicating the given/when lists, in the original order.
/// A criterion that is already atomic is returned unchanged.
pub fn atomicize(ac: &AcceptanceCriterion) -> Vec<AcceptanceCriterion> {
    if ac.is_atomic() {
        return vec![ac.clone()];
    }
    ac.then
        .iter()
        .map(|outcome| {
            AcceptanceCriterion::from_parts(
                ac.given.clone(),
                ac.when.clone(),
                vec![outcome.clone()],
            )
        })
        .collect()
}

/// Renders criteria one per line in canonical form.
pub fn render_criteria(acs: &[AcceptanceCriterion]) -> String {
    acs.iter().map(AcceptanceCriterion::render).collect::<Vec<_>>().join("\n")
}

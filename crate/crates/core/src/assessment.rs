//! Pre-test, post-test, rubric grading, and the post-session feedback report.
//!
//! Scores live on a three-step rubric ([`Score`]): 0, 0.5 and 1.0. A grader
//! answering anything else is a [`AssessmentError::GraderFailure`]; values are
//! never clamped onto the rubric.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{self, Execution};
use crate::config::{PhraseInventory, PracticeSet, TargetPhrase, PRACTICE_SIZE};
use crate::ids::PhraseId;
use crate::session::{SessionState, TurnRecord};
use crate::tracker::{normalize, PhraseMatcher};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Familiarity {
    CompletelyUnfamiliar,
    SomewhatFamiliar,
    CanGuess,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamiliarityRating {
    pub phrase_id: PhraseId,
    pub level: Familiarity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Definition,
    Sentence,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Definition => "definition",
            TaskKind::Sentence => "sentence",
        })
    }
}

/// One rubric step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Score {
    Zero,
    Half,
    Full,
}

impl Score {
    pub fn half_points(self) -> u32 {
        match self {
            Score::Zero => 0,
            Score::Half => 1,
            Score::Full => 2,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.half_points()) / 2.0
    }
}

impl TryFrom<f64> for Score {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, String> {
        if v == 0.0 {
            Ok(Score::Zero)
        } else if v == 0.5 {
            Ok(Score::Half)
        } else if v == 1.0 {
            Ok(Score::Full)
        } else {
            Err(format!("score {v} is not one of 0, 0.5, 1.0"))
        }
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.value()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentItem {
    pub phrase_id: PhraseId,
    pub stage: Stage,
    pub familiarity: Option<Familiarity>,
    pub definition_text: Option<String>,
    pub sentence_text: Option<String>,
    pub definition_score: Option<Score>,
    pub sentence_score: Option<Score>,
    pub grader_rationale: String,
}

impl AssessmentItem {
    /// Score counted towards the task total; ungraded items count as 0.
    pub fn score(&self, task: TaskKind) -> Score {
        match task {
            TaskKind::Definition => self.definition_score,
            TaskKind::Sentence => self.sentence_score,
        }
        .unwrap_or(Score::Zero)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub stage: Stage,
    pub task: TaskKind,
    /// Sum of the five per-phrase scores, 0..=5 in steps of 0.5.
    pub total: f64,
}

impl TaskScore {
    pub fn sum(stage: Stage, task: TaskKind, items: &[AssessmentItem]) -> Self {
        let half_points: u32 = items.iter().map(|i| i.score(task).half_points()).sum();
        Self { stage, task, total: f64::from(half_points) / 2.0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssessmentError {
    #[error("expected {PRACTICE_SIZE} selected phrases, got {0}")]
    WrongSelectionCount(usize),
    #[error("phrase {0} is not in the inventory")]
    UnknownPhrase(PhraseId),
    #[error("phrase {0} selected more than once")]
    DuplicateSelection(PhraseId),
    #[error("no familiarity rating for {0}")]
    MissingRating(PhraseId),
    #[error("phrase {0} needs a definition and a sentence")]
    MissingElicitation(PhraseId),
    #[error("phrase {0} was rated completely unfamiliar and must not be elicited")]
    UnexpectedElicitation(PhraseId),
    #[error("missing or blank post-test response for {0}")]
    IncompleteResponses(PhraseId),
    #[error("nothing to grade: learner text is empty")]
    EmptyText,
    #[error("grader failure: {0}")]
    GraderFailure(String),
    #[error("feedback needs a finished session")]
    SessionNotFinished,
}

/// Raw grader output, checked against the rubric by [`grade`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graded {
    pub score: f64,
    pub rationale: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Grammar,
    WordChoice,
    PhraseMisuse,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub category: ErrorCategory,
    pub correction: String,
    pub explanation: String,
}

/// The grader's opinion on one target phrase within one transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseVerdict {
    pub phrase_id: PhraseId,
    /// What the grader believes about usage. Never used for the formative
    /// used/count fields, which come from the tracker.
    pub claimed_used: bool,
    pub correct: bool,
    pub appropriate: bool,
    pub revision: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptReview {
    pub issues: Vec<Issue>,
    pub verdicts: Vec<PhraseVerdict>,
}

pub trait Grader: Send + Sync {
    fn grade(&self, task: TaskKind, phrase: &TargetPhrase, learner_text: &str) -> Result<Graded, String>;

    fn review(&self, transcript: &str, practice: &[&TargetPhrase]) -> Result<TranscriptReview, String>;
}

/// Grades one response and checks the result lies on the rubric.
pub fn grade(
    task: TaskKind,
    phrase: &TargetPhrase,
    learner_text: &str,
    grader: &dyn Grader,
) -> Result<(Score, String), AssessmentError> {
    if learner_text.trim().is_empty() {
        return Err(AssessmentError::EmptyText);
    }
    let graded = grader
        .grade(task, phrase, learner_text)
        .map_err(AssessmentError::GraderFailure)?;
    let score = Score::try_from(graded.score).map_err(AssessmentError::GraderFailure)?;
    Ok((score, graded.rationale))
}

fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// A case-insensitive pattern that the mock grader flags as an error.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRule {
    pub pattern: String,
    pub category: ErrorCategory,
    pub correction: String,
    pub explanation: String,
}

/// Deterministic keyword grader.
///
/// Definitions score by how many of the phrase's meaning keywords appear:
/// two or more give 1.0, one gives 0.5. Sentences score 0 unless the phrase
/// itself is used; its presence then counts as one hit on top of the keyword
/// hits. Transcript review flags every occurrence of a configured
/// [`ErrorRule`] pattern.
#[derive(Clone, Debug, Default)]
pub struct MockGrader {
    rules: Vec<ErrorRule>,
}

impl MockGrader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rules(rules: Vec<ErrorRule>) -> Self {
        Self { rules }
    }

    fn keyword_hits<'a>(phrase: &'a TargetPhrase, tokens: &[String]) -> Vec<&'a str> {
        phrase
            .keywords
            .iter()
            .filter(|k| contains_tokens(tokens, &normalize(k)))
            .map(String::as_str)
            .collect()
    }

    fn uses_phrase(phrase: &TargetPhrase, text: &str) -> bool {
        PhraseMatcher::new([phrase]).detect(text)[0].occurrences > 0
    }
}

fn score_for_hits(hits: usize) -> f64 {
    match hits {
        0 => 0.0,
        1 => 0.5,
        _ => 1.0,
    }
}

impl Grader for MockGrader {
    fn grade(&self, task: TaskKind, phrase: &TargetPhrase, learner_text: &str) -> Result<Graded, String> {
        let tokens = normalize(learner_text);
        let hits = Self::keyword_hits(phrase, &tokens);
        let (score, rationale) = match task {
            TaskKind::Definition => (
                score_for_hits(hits.len()),
                format!("Definition matched {} meaning keyword(s): {:?}.", hits.len(), hits),
            ),
            TaskKind::Sentence if !Self::uses_phrase(phrase, learner_text) => (
                0.0,
                format!("The sentence does not use \"{}\".", phrase.canonical),
            ),
            TaskKind::Sentence => (
                score_for_hits(hits.len() + 1),
                format!(
                    "Uses \"{}\"; context matched {} meaning keyword(s): {:?}.",
                    phrase.canonical,
                    hits.len(),
                    hits
                ),
            ),
        };
        Ok(Graded { score, rationale })
    }

    fn review(&self, transcript: &str, practice: &[&TargetPhrase]) -> Result<TranscriptReview, String> {
        let lower = transcript.to_lowercase();
        let mut issues = Vec::new();
        for rule in &self.rules {
            let pattern = rule.pattern.to_lowercase();
            if pattern.is_empty() {
                continue;
            }
            for _ in lower.matches(pattern.as_str()) {
                issues.push(Issue {
                    category: rule.category,
                    correction: rule.correction.clone(),
                    explanation: rule.explanation.clone(),
                });
            }
        }
        let misuse = issues.iter().any(|i| i.category == ErrorCategory::PhraseMisuse);
        let tokens = normalize(transcript);
        let verdicts = practice
            .iter()
            .filter(|p| Self::uses_phrase(p, transcript))
            .map(|p| PhraseVerdict {
                phrase_id: p.id.clone(),
                claimed_used: true,
                correct: !misuse,
                appropriate: !Self::keyword_hits(p, &tokens).is_empty() || !misuse,
                revision: misuse.then(|| p.example.clone()),
            })
            .collect();
        Ok(TranscriptReview { issues, verdicts })
    }
}

/// Definition and sentence elicited for a partially known phrase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elicitation {
    pub phrase_id: PhraseId,
    pub definition: String,
    pub sentence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretestResult {
    pub items: Vec<AssessmentItem>,
    pub definition: TaskScore,
    pub sentence: TaskScore,
}

fn resolve_selection<'a>(
    selections: &[PhraseId],
    inventory: &'a PhraseInventory,
) -> Result<Vec<&'a TargetPhrase>, AssessmentError> {
    if selections.len() != PRACTICE_SIZE {
        return Err(AssessmentError::WrongSelectionCount(selections.len()));
    }
    let mut phrases: Vec<&TargetPhrase> = Vec::with_capacity(PRACTICE_SIZE);
    for id in selections {
        let p = inventory
            .get(id)
            .ok_or_else(|| AssessmentError::UnknownPhrase(id.clone()))?;
        if phrases.iter().any(|q| q.id == p.id) {
            return Err(AssessmentError::DuplicateSelection(id.clone()));
        }
        phrases.push(p);
    }
    Ok(phrases)
}

/// Initial assessment. Phrases rated completely unfamiliar score 0 without
/// elicitation; the others must come with a definition and a sentence, which
/// are graded.
pub fn run_pretest(
    selections: &[PhraseId],
    ratings: &[FamiliarityRating],
    elicited: &[Elicitation],
    inventory: &PhraseInventory,
    grader: &dyn Grader,
) -> Result<PretestResult, AssessmentError> {
    let phrases = resolve_selection(selections, inventory)?;
    for e in elicited {
        if !selections.contains(&e.phrase_id) {
            return Err(AssessmentError::UnexpectedElicitation(e.phrase_id.clone()));
        }
    }

    let mut items = Vec::with_capacity(PRACTICE_SIZE);
    for phrase in phrases {
        let level = ratings
            .iter()
            .find(|r| r.phrase_id == phrase.id)
            .ok_or_else(|| AssessmentError::MissingRating(phrase.id.clone()))?
            .level;
        let texts = elicited.iter().find(|e| e.phrase_id == phrase.id);
        let item = match (level, texts) {
            (Familiarity::CompletelyUnfamiliar, Some(_)) => {
                return Err(AssessmentError::UnexpectedElicitation(phrase.id.clone()))
            }
            (Familiarity::CompletelyUnfamiliar, None) => AssessmentItem {
                phrase_id: phrase.id.clone(),
                stage: Stage::Pre,
                familiarity: Some(level),
                definition_text: None,
                sentence_text: None,
                definition_score: None,
                sentence_score: None,
                grader_rationale: "Rated completely unfamiliar; scored 0 without elicitation.".into(),
            },
            (_, Some(e)) if !e.definition.trim().is_empty() && !e.sentence.trim().is_empty() => {
                graded_item(Stage::Pre, Some(level), phrase, &e.definition, &e.sentence, grader)?
            }
            (_, _) => return Err(AssessmentError::MissingElicitation(phrase.id.clone())),
        };
        items.push(item);
    }
    Ok(PretestResult {
        definition: TaskScore::sum(Stage::Pre, TaskKind::Definition, &items),
        sentence: TaskScore::sum(Stage::Pre, TaskKind::Sentence, &items),
        items,
    })
}

fn graded_item(
    stage: Stage,
    familiarity: Option<Familiarity>,
    phrase: &TargetPhrase,
    definition: &str,
    sentence: &str,
    grader: &dyn Grader,
) -> Result<AssessmentItem, AssessmentError> {
    let (definition_score, def_why) = grade(TaskKind::Definition, phrase, definition, grader)?;
    let (sentence_score, sent_why) = grade(TaskKind::Sentence, phrase, sentence, grader)?;
    Ok(AssessmentItem {
        phrase_id: phrase.id.clone(),
        stage,
        familiarity,
        definition_text: Some(definition.to_owned()),
        sentence_text: Some(sentence.to_owned()),
        definition_score: Some(definition_score),
        sentence_score: Some(sentence_score),
        grader_rationale: format!("Definition: {def_why} Sentence: {sent_why}"),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosttestResponse {
    pub phrase_id: PhraseId,
    pub definition: String,
    pub sentence: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFeedback {
    pub phrase_id: PhraseId,
    pub definition_score: Score,
    pub sentence_score: Score,
    pub feedback: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosttestResult {
    pub items: Vec<AssessmentItem>,
    pub definition: TaskScore,
    pub sentence: TaskScore,
    pub feedback: Vec<ItemFeedback>,
}

/// Immediate post-test: every practised phrase is defined and used in a
/// sentence, and all ten answers are graded (concurrently under
/// [`Execution::Parallel`]).
pub fn run_posttest(
    practice: &PracticeSet,
    responses: &[PosttestResponse],
    inventory: &PhraseInventory,
    grader: &dyn Grader,
    exec: Execution,
) -> Result<PosttestResult, AssessmentError> {
    let mut work = Vec::with_capacity(PRACTICE_SIZE);
    for phrase in practice.phrases(inventory) {
        let r = responses
            .iter()
            .find(|r| r.phrase_id == phrase.id)
            .filter(|r| !r.definition.trim().is_empty() && !r.sentence.trim().is_empty())
            .ok_or_else(|| AssessmentError::IncompleteResponses(phrase.id.clone()))?;
        work.push((phrase, TaskKind::Definition, r.definition.as_str()));
        work.push((phrase, TaskKind::Sentence, r.sentence.as_str()));
    }
    let graded = batch::try_map(exec, &work, |(phrase, task, text)| grade(*task, phrase, text, grader))?;

    let mut items = Vec::with_capacity(PRACTICE_SIZE);
    let mut feedback = Vec::with_capacity(PRACTICE_SIZE);
    for (pair, scores) in work.chunks(2).zip(graded.chunks(2)) {
        let phrase = pair[0].0;
        let ((def_score, def_why), (sent_score, sent_why)) = (&scores[0], &scores[1]);
        items.push(AssessmentItem {
            phrase_id: phrase.id.clone(),
            stage: Stage::Post,
            familiarity: None,
            definition_text: Some(pair[0].2.to_owned()),
            sentence_text: Some(pair[1].2.to_owned()),
            definition_score: Some(*def_score),
            sentence_score: Some(*sent_score),
            grader_rationale: format!("Definition: {def_why} Sentence: {sent_why}"),
        });
        feedback.push(ItemFeedback {
            phrase_id: phrase.id.clone(),
            definition_score: *def_score,
            sentence_score: *sent_score,
            feedback: format!("{def_why} {sent_why}"),
        });
    }
    Ok(PosttestResult {
        definition: TaskScore::sum(Stage::Post, TaskKind::Definition, &items),
        sentence: TaskScore::sum(Stage::Post, TaskKind::Sentence, &items),
        items,
        feedback,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralFeedback {
    pub grammar: u32,
    pub word_choice: u32,
    pub phrase_misuse: u32,
}

impl GeneralFeedback {
    pub fn total(&self) -> u32 {
        self.grammar + self.word_choice + self.phrase_misuse
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecificFeedback {
    pub turn_index: u8,
    pub learner_sentence: String,
    pub category: ErrorCategory,
    pub correction: String,
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormativeEntry {
    pub phrase_id: PhraseId,
    pub phrase: String,
    pub used: bool,
    pub count: u32,
    /// `None` when the phrase was never used.
    pub correct: Option<bool>,
    pub appropriate: Option<bool>,
    pub example: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub general: GeneralFeedback,
    pub specific: Vec<SpecificFeedback>,
    pub formative: Vec<FormativeEntry>,
}

impl FeedbackReport {
    pub fn specific_count(&self, category: ErrorCategory) -> u32 {
        self.specific.iter().filter(|s| s.category == category).count() as u32
    }
}

/// Three-level post-session feedback. Usage facts come from the session's
/// tracker state; the grader only supplies corrections and verdicts.
pub fn build_feedback_report(
    state: &SessionState,
    records: &[TurnRecord],
    inventory: &PhraseInventory,
    grader: &dyn Grader,
    exec: Execution,
) -> Result<FeedbackReport, AssessmentError> {
    if !state.is_finished() {
        return Err(AssessmentError::SessionNotFinished);
    }
    let practice = state.practice.phrases(inventory);
    let reviews = batch::try_map(exec, records, |r| {
        grader
            .review(&r.learner_transcript, &practice)
            .map_err(AssessmentError::GraderFailure)
    })?;

    let mut general = GeneralFeedback::default();
    let mut specific = Vec::new();
    for (record, review) in records.iter().zip(&reviews) {
        for issue in &review.issues {
            match issue.category {
                ErrorCategory::Grammar => general.grammar += 1,
                ErrorCategory::WordChoice => general.word_choice += 1,
                ErrorCategory::PhraseMisuse => general.phrase_misuse += 1,
            }
            specific.push(SpecificFeedback {
                turn_index: record.turn_index,
                learner_sentence: record.learner_transcript.clone(),
                category: issue.category,
                correction: issue.correction.clone(),
                explanation: issue.explanation.clone(),
            });
        }
    }

    let formative = practice
        .iter()
        .map(|phrase| {
            let count = state.usage_of(&phrase.id).map_or(0, |u| u.count);
            let used = count > 0;
            let verdicts: Vec<&PhraseVerdict> = reviews
                .iter()
                .flat_map(|r| &r.verdicts)
                .filter(|v| v.phrase_id == phrase.id)
                .collect();
            let (correct, appropriate) = if used && !verdicts.is_empty() {
                (
                    Some(verdicts.iter().all(|v| v.correct)),
                    Some(verdicts.iter().all(|v| v.appropriate)),
                )
            } else {
                (None, None)
            };
            let example = if !used {
                Some(phrase.example.clone())
            } else if correct == Some(false) || appropriate == Some(false) {
                verdicts
                    .iter()
                    .find_map(|v| v.revision.clone())
                    .or_else(|| Some(phrase.example.clone()))
            } else {
                None
            };
            FormativeEntry {
                phrase_id: phrase.id.clone(),
                phrase: phrase.canonical.clone(),
                used,
                count,
                correct,
                appropriate,
                example,
            }
        })
        .collect();

    Ok(FeedbackReport { general, specific, formative })
}

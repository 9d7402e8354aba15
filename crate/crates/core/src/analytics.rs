//! Cohort measures: normalized growth, target-phrase usage frequency, and
//! engagement survey means, plus the combined [`GroupReport`].
//!
//! Group means are computed from integer sums (usage counts, Likert answers,
//! half-point rubric totals) so they do not depend on input order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{self, Execution};
use crate::session::{Mode, SessionState};

pub const MAX_SCORE: f64 = 5.0;
pub const REPORT_VERSION: u32 = 1;
pub const LIKERT_QUESTIONS: [&str; 4] = [
    "I was engaged during the activity",
    "The examples and contexts helped me understand the vocabulary",
    "I had enough opportunity to use the vocabulary",
    "The way the AI mentor/Game Master used the target words helped me understand them",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Control,
    Game,
}

impl From<Mode> for Group {
    fn from(mode: Mode) -> Self {
        match mode {
            Mode::Rpg => Group::Game,
            Mode::Classroom => Group::Control,
        }
    }
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Control => "Control Group",
            Group::Game => "RPG Group",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("already at ceiling: pre-test score equals the maximum")]
    DegeneratePre,
    #[error("score {0} outside 0..={1}")]
    OutOfRange(f64, f64),
    #[error("empty group{}", .0.map(|g| format!(" ({g:?})")).unwrap_or_default())]
    EmptyGroup(Option<Group>),
    #[error("session {0} is not finished")]
    Unfinished(String),
    #[error("invalid survey response from {0}: answers must be 1..=5")]
    InvalidSurvey(String),
    #[error("inconsistent participant ids: {0}")]
    InconsistentIds(String),
}

/// `(post - pre) / (max - pre)`. Negative when the learner regressed.
pub fn growth_rate(pre: f64, post: f64, max: f64) -> Result<f64, AnalyticsError> {
    for v in [pre, post] {
        if !(0.0..=max).contains(&v) {
            return Err(AnalyticsError::OutOfRange(v, max));
        }
    }
    if pre == max {
        return Err(AnalyticsError::DegeneratePre);
    }
    Ok((post - pre) / (max - pre))
}

/// Mean over participants of the total detected uses of their five phrases.
pub fn mean_usage(sessions: &[SessionState]) -> Result<f64, AnalyticsError> {
    mean_usage_with(sessions, Execution::default())
}

pub fn mean_usage_with(sessions: &[SessionState], exec: Execution) -> Result<f64, AnalyticsError> {
    if sessions.is_empty() {
        return Err(AnalyticsError::EmptyGroup(None));
    }
    let totals = batch::try_map(exec, sessions, |s| {
        if s.is_finished() {
            Ok(u64::from(s.total_usage()))
        } else {
            Err(AnalyticsError::Unfinished(s.session_id.clone()))
        }
    })?;
    Ok(totals.iter().sum::<u64>() as f64 / sessions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub participant_id: String,
    pub group: Group,
    pub q1: u8,
    pub q2: u8,
    pub q3: u8,
    pub q4: u8,
}

impl SurveyResponse {
    pub fn answers(&self) -> [u8; 4] {
        [self.q1, self.q2, self.q3, self.q4]
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.answers().iter().all(|a| (1..=5).contains(a)) {
            Ok(())
        } else {
            Err(AnalyticsError::InvalidSurvey(self.participant_id.clone()))
        }
    }
}

/// Per-question means for the responses belonging to `group`.
pub fn likert_means(responses: &[SurveyResponse], group: Group) -> Result<[f64; 4], AnalyticsError> {
    let mut sums = [0u64; 4];
    let mut n = 0u64;
    for r in responses.iter().filter(|r| r.group == group) {
        r.validate()?;
        for (sum, a) in sums.iter_mut().zip(r.answers()) {
            *sum += u64::from(a);
        }
        n += 1;
    }
    if n == 0 {
        return Err(AnalyticsError::EmptyGroup(Some(group)));
    }
    Ok(sums.map(|s| s as f64 / n as f64))
}

/// Task totals of one participant, each in 0..=5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub participant_id: String,
    pub pre_definition: f64,
    pub pre_sentence: f64,
    pub post_definition: f64,
    pub post_sentence: f64,
}

/// A computed value, or the reason it could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Value(f64),
    Unavailable(String),
}

impl Metric {
    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(*v),
            Metric::Unavailable(_) => None,
        }
    }

    fn from_result(r: Result<f64, AnalyticsError>) -> Self {
        match r {
            Ok(v) => Metric::Value(v),
            Err(e) => Metric::Unavailable(e.to_string()),
        }
    }

    fn render(&self, decimals: usize) -> String {
        match self {
            Metric::Value(v) => format!("{v:.decimals$}"),
            Metric::Unavailable(_) => "n/a".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub participants: usize,
    pub mean_pre_definition: Metric,
    pub mean_post_definition: Metric,
    pub mean_pre_sentence: Metric,
    pub mean_post_sentence: Metric,
    /// Growth of the group's mean scores.
    pub definition_growth: Metric,
    pub sentence_growth: Metric,
    pub mean_usage: Metric,
    pub likert: Vec<Metric>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub report_version: u32,
    pub groups: BTreeMap<Group, GroupMetrics>,
}

impl GroupReport {
    pub fn group(&self, g: Group) -> &GroupMetrics {
        &self.groups[&g]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn mean_of(values: &[f64], group: Group) -> Result<f64, AnalyticsError> {
    if values.is_empty() {
        return Err(AnalyticsError::EmptyGroup(Some(group)));
    }
    // rubric totals are multiples of 0.5; sum as half points
    let half_points: i64 = values.iter().map(|v| (v * 2.0).round() as i64).sum();
    Ok(half_points as f64 / 2.0 / values.len() as f64)
}

fn check_assessment(a: &AssessmentRecord) -> Result<(), AnalyticsError> {
    for v in [a.pre_definition, a.pre_sentence, a.post_definition, a.post_sentence] {
        if !(0.0..=MAX_SCORE).contains(&v) || (v * 2.0).fract() != 0.0 {
            return Err(AnalyticsError::OutOfRange(v, MAX_SCORE));
        }
    }
    Ok(())
}

/// Builds per-group metrics. A metric that cannot be computed for one group
/// (empty group, ceiling pre-score) is reported as unavailable without
/// stopping the rest of the report.
pub fn build_group_report(
    assessments: &[AssessmentRecord],
    sessions: &[SessionState],
    surveys: &[SurveyResponse],
    exec: Execution,
) -> Result<GroupReport, AnalyticsError> {
    let mut group_of: HashMap<&str, Group> = HashMap::new();
    for s in sessions {
        if group_of.insert(s.participant_id.as_str(), s.mode.into()).is_some() {
            return Err(AnalyticsError::InconsistentIds(format!(
                "participant {} has more than one session",
                s.participant_id
            )));
        }
    }
    for a in assessments {
        check_assessment(a)?;
        if !group_of.contains_key(a.participant_id.as_str()) {
            return Err(AnalyticsError::InconsistentIds(format!(
                "assessment for {} has no session",
                a.participant_id
            )));
        }
    }
    for r in surveys {
        r.validate()?;
        match group_of.get(r.participant_id.as_str()) {
            None => {
                return Err(AnalyticsError::InconsistentIds(format!(
                    "survey from {} has no session",
                    r.participant_id
                )))
            }
            Some(g) if *g != r.group => {
                return Err(AnalyticsError::InconsistentIds(format!(
                    "survey from {} is filed under {:?} but the session is {:?}",
                    r.participant_id, r.group, g
                )))
            }
            _ => {}
        }
    }

    let groups = [Group::Control, Group::Game];
    let metrics = batch::map(exec, &groups, |&group| {
        let members: Vec<SessionState> = sessions
            .iter()
            .filter(|s| Group::from(s.mode) == group)
            .cloned()
            .collect();
        let records: Vec<&AssessmentRecord> = assessments
            .iter()
            .filter(|a| group_of.get(a.participant_id.as_str()) == Some(&group))
            .collect();
        let column = |f: fn(&AssessmentRecord) -> f64| records.iter().map(|a| f(a)).collect::<Vec<_>>();
        let pre_def = mean_of(&column(|a| a.pre_definition), group);
        let post_def = mean_of(&column(|a| a.post_definition), group);
        let pre_sent = mean_of(&column(|a| a.pre_sentence), group);
        let post_sent = mean_of(&column(|a| a.post_sentence), group);
        let growth = |pre: &Result<f64, AnalyticsError>, post: &Result<f64, AnalyticsError>| {
            Metric::from_result(match (pre, post) {
                (Ok(pre), Ok(post)) => growth_rate(*pre, *post, MAX_SCORE),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            })
        };
        let usage = if members.is_empty() {
            Err(AnalyticsError::EmptyGroup(Some(group)))
        } else {
            mean_usage_with(&members, Execution::Sequential)
        };
        let likert = match likert_means(surveys, group) {
            Ok(means) => means.iter().map(|m| Metric::Value(*m)).collect(),
            Err(e) => vec![Metric::Unavailable(e.to_string()); 4],
        };
        GroupMetrics {
            group,
            participants: members.len(),
            definition_growth: growth(&pre_def, &post_def),
            sentence_growth: growth(&pre_sent, &post_sent),
            mean_pre_definition: Metric::from_result(pre_def),
            mean_post_definition: Metric::from_result(post_def),
            mean_pre_sentence: Metric::from_result(pre_sent),
            mean_post_sentence: Metric::from_result(post_sent),
            mean_usage: Metric::from_result(usage),
            likert,
        }
    });
    Ok(GroupReport {
        report_version: REPORT_VERSION,
        groups: groups.into_iter().zip(metrics).collect(),
    })
}

/// Human-readable tables: growth (3 decimals), usage (2), survey means (3).
pub fn render_tables(report: &GroupReport) -> String {
    let c = report.group(Group::Control);
    let g = report.group(Group::Game);
    let mut out = String::new();
    let _ = writeln!(out, "Normalized Growth Rate by Group and Task");
    let _ = writeln!(out, "{:<30}{:>15}{:>12}", "Assessment Task", "Control Group", "RPG Group");
    let _ = writeln!(
        out,
        "{:<30}{:>15}{:>12}",
        "Definition Accuracy",
        c.definition_growth.render(3),
        g.definition_growth.render(3)
    );
    let _ = writeln!(
        out,
        "{:<30}{:>15}{:>12}",
        "Correct Sentence Generation",
        c.sentence_growth.render(3),
        g.sentence_growth.render(3)
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "Mean Frequency of Target Vocabulary Usage");
    let _ = writeln!(out, "{:<30}{:>18}", "Group", "Mean Usage Count");
    for m in [c, g] {
        let _ = writeln!(out, "{:<30}{:>18}", m.group.label(), m.mean_usage.render(2));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Self-reported Engagement (Likert means, 1-5)");
    let _ = writeln!(out, "{:<8}{:>10}{:>10}  Statement", "Item", "Control", "Game");
    for (i, q) in LIKERT_QUESTIONS.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}  {q}",
            format!("Q{}", i + 1),
            c.likert[i].render(3),
            g.likert[i].render(3)
        );
    }
    out
}

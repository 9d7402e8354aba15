//! Append-only session log and replay.
//!
//! A log is a JSON-lines file, one [`SessionEvent`] per line. Events carry
//! the inputs of every turn, so [`replay`] rebuilds the session by running
//! the same pure transitions the live service ran and checking each result
//! against what was recorded.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{AssessmentRecord, SurveyResponse};
use crate::assessment::{AssessmentItem, FeedbackReport, Stage, TaskKind, TaskScore};
use crate::batch::{self, Execution};
use crate::config::{GameConfig, PRACTICE_SIZE, TOTAL_TURNS};
use crate::gm::GmResponse;
use crate::ids::{HeroId, PhraseId};
use crate::session::{self, Mode, Outcome, SessionState, TurnRecord};
use crate::tracker::ReminderDecision;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub schema_version: u32,
    pub seq: u64,
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Created(Created),
    PretestItem(AssessmentItem),
    TurnCompleted(TurnCompleted),
    ReminderShown(ReminderDecision),
    Finished(Finished),
    FeedbackBuilt(FeedbackReport),
    PosttestItem(AssessmentItem),
    SurveyRecorded(SurveyResponse),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Created(_) => "created",
            EventBody::PretestItem(_) => "pretest_item",
            EventBody::TurnCompleted(_) => "turn_completed",
            EventBody::ReminderShown(_) => "reminder_shown",
            EventBody::Finished(_) => "finished",
            EventBody::FeedbackBuilt(_) => "feedback_built",
            EventBody::PosttestItem(_) => "posttest_item",
            EventBody::SurveyRecorded(_) => "survey_recorded",
        }
    }

    /// Position in the session lifecycle; a log's ranks never decrease.
    fn rank(&self) -> u8 {
        match self {
            EventBody::Created(_) => 0,
            EventBody::PretestItem(_) => 1,
            EventBody::TurnCompleted(_) | EventBody::ReminderShown(_) => 2,
            EventBody::Finished(_) => 3,
            EventBody::FeedbackBuilt(_) => 4,
            EventBody::PosttestItem(_) => 5,
            EventBody::SurveyRecorded(_) => 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Created {
    pub participant_id: String,
    pub mode: Mode,
    pub practice: Vec<PhraseId>,
    pub hero_id: Option<HeroId>,
    pub config_digest: String,
}

/// What the turn was computed from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TurnInput {
    Rpg { gm_response: GmResponse },
    Classroom { agent_reply: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnCompleted {
    pub input: TurnInput,
    pub record: TurnRecord,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finished {
    pub turn_index: u8,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Error)]
pub enum LogError {
    // cause kept in the message only, so error chains don't print it twice
    #[error("{path}: {err}")]
    Io { path: String, err: io::Error },
    #[error("corrupt log: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("corrupt log: {0}")]
pub struct CorruptLog(pub String);

impl From<CorruptLog> for LogError {
    fn from(e: CorruptLog) -> Self {
        LogError::Corrupt(e.0)
    }
}

/// Destination for committed events.
pub trait EventSink: Send {
    /// Appends all events or none of them.
    fn append(&mut self, events: &[SessionEvent]) -> io::Result<()>;
}

/// In-memory sink, mostly for tests. Clones share the same storage, so a
/// caller can keep a handle after giving one to a runtime.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    events: Arc<Mutex<Vec<SessionEvent>>>,
}

impl MemorySink {
    pub fn events(&self) -> Vec<SessionEvent> {
        self.events.lock().expect("memory sink poisoned").clone()
    }
}

impl EventSink for MemorySink {
    fn append(&mut self, events: &[SessionEvent]) -> io::Result<()> {
        self.events.lock().expect("memory sink poisoned").extend_from_slice(events);
        Ok(())
    }
}

impl<S: EventSink + ?Sized> EventSink for Box<S> {
    fn append(&mut self, events: &[SessionEvent]) -> io::Result<()> {
        (**self).append(events)
    }
}

/// JSON-lines log file for one session.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
}

impl FileLog {
    /// Creates a new log; fails if the file already exists.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|err| LogError::Io { path: path.display().to_string(), err })?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for FileLog {
    fn append(&mut self, events: &[SessionEvent]) -> io::Result<()> {
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let before = self.file.metadata()?.len();
        let written = self.file.write_all(&buf).and_then(|_| self.file.sync_data());
        if let Err(e) = written {
            // drop whatever part of the batch made it to disk
            let _ = self.file.set_len(before);
            return Err(e);
        }
        Ok(())
    }
}

pub fn parse_log(text: &str) -> Result<Vec<SessionEvent>, CorruptLog> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CorruptLog(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<SessionEvent>, LogError> {
    let path = path.as_ref();
    let io_err = |err| LogError::Io { path: path.display().to_string(), err };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| LogError::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

/// Everything recoverable from one session log.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayedSession {
    pub state: SessionState,
    pub records: Vec<TurnRecord>,
    pub pretest: Vec<AssessmentItem>,
    pub feedback: Option<FeedbackReport>,
    pub posttest: Vec<AssessmentItem>,
    pub survey: Option<SurveyResponse>,
}

impl ReplayedSession {
    /// Task totals, once both tests are complete.
    pub fn assessment_record(&self) -> Option<AssessmentRecord> {
        if self.pretest.len() != PRACTICE_SIZE || self.posttest.len() != PRACTICE_SIZE {
            return None;
        }
        let total = |items: &[AssessmentItem], stage, task| TaskScore::sum(stage, task, items).total;
        Some(AssessmentRecord {
            participant_id: self.state.participant_id.clone(),
            pre_definition: total(&self.pretest, Stage::Pre, TaskKind::Definition),
            pre_sentence: total(&self.pretest, Stage::Pre, TaskKind::Sentence),
            post_definition: total(&self.posttest, Stage::Post, TaskKind::Definition),
            post_sentence: total(&self.posttest, Stage::Post, TaskKind::Sentence),
        })
    }
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T, CorruptLog> {
    Err(CorruptLog(msg.into()))
}

/// Folds a session log back into its final state.
pub fn replay(events: &[SessionEvent], config: &GameConfig) -> Result<ReplayedSession, CorruptLog> {
    let Some(first) = events.first() else {
        return corrupt("missing created");
    };
    let EventBody::Created(created) = &first.body else {
        return corrupt("missing created");
    };
    let session_id = first.session_id.clone();
    let mut last_rank = 0;
    for (i, e) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if e.seq != expected {
            return corrupt(format!("seq gap: expected {expected}, found {}", e.seq));
        }
        if e.schema_version != LOG_SCHEMA_VERSION {
            return corrupt(format!("unsupported schema_version {}", e.schema_version));
        }
        if e.session_id != session_id {
            return corrupt(format!("event {} belongs to session {}", e.seq, e.session_id));
        }
        let rank = e.body.rank();
        if rank < last_rank || (i > 0 && rank == 0) {
            return corrupt(format!("lifecycle violation: {} at seq {}", e.body.kind(), e.seq));
        }
        last_rank = rank;
    }

    if created.config_digest != config.digest() {
        return corrupt("config digest mismatch: the log was written with a different configuration");
    }
    let mut state = session::create_session(
        session_id.clone(),
        created.participant_id.clone(),
        created.mode,
        created.practice.clone(),
        created.hero_id.clone(),
        config,
    )
    .map_err(|e| CorruptLog(format!("created event rejected: {e}")))?;

    let mut out = ReplayedSession {
        state: state.clone(),
        records: Vec::new(),
        pretest: Vec::new(),
        feedback: None,
        posttest: Vec::new(),
        survey: None,
    };
    let mut finished_seen = false;
    for e in &events[1..] {
        match &e.body {
            EventBody::Created(_) => unreachable!("rank check rejects a second created"),
            EventBody::PretestItem(item) => {
                if out.pretest.len() == PRACTICE_SIZE || !state.practice.contains(&item.phrase_id) {
                    return corrupt(format!("unexpected pretest item at seq {}", e.seq));
                }
                out.pretest.push(item.clone());
            }
            EventBody::TurnCompleted(turn) => {
                let record = &turn.record;
                let (next, replayed) = match (&turn.input, state.mode) {
                    (TurnInput::Rpg { gm_response }, Mode::Rpg) => session::advance_rpg_turn(
                        &state,
                        config,
                        &record.learner_transcript,
                        gm_response,
                        record.timestamp,
                    ),
                    (TurnInput::Classroom { agent_reply }, Mode::Classroom) => session::advance_classroom_turn(
                        &state,
                        config,
                        &record.learner_transcript,
                        agent_reply,
                        record.timestamp,
                    ),
                    _ => return corrupt(format!("turn input at seq {} does not match the session mode", e.seq)),
                }
                .map_err(|err| CorruptLog(format!("turn at seq {} rejected on replay: {err}", e.seq)))?;
                if &replayed != record {
                    return corrupt(format!("turn {} diverges from its recorded outcome", record.turn_index));
                }
                state = next;
                out.records.push(replayed);
            }
            EventBody::ReminderShown(reminder) => {
                let shown = out.records.last().and_then(|r| r.reminder.as_ref());
                if shown != Some(reminder) {
                    return corrupt(format!("reminder at seq {} does not match its turn", e.seq));
                }
            }
            EventBody::Finished(f) => {
                if finished_seen || !state.is_finished() || f.turn_index != TOTAL_TURNS || f.outcome != state.outcome {
                    return corrupt(format!("finished event at seq {} does not match the session", e.seq));
                }
                finished_seen = true;
            }
            EventBody::FeedbackBuilt(report) => {
                if !finished_seen || out.feedback.is_some() {
                    return corrupt(format!("feedback at seq {} outside the finished session", e.seq));
                }
                out.feedback = Some(report.clone());
            }
            EventBody::PosttestItem(item) => {
                if !finished_seen || out.posttest.len() == PRACTICE_SIZE || !state.practice.contains(&item.phrase_id) {
                    return corrupt(format!("unexpected posttest item at seq {}", e.seq));
                }
                out.posttest.push(item.clone());
            }
            EventBody::SurveyRecorded(survey) => {
                if out.survey.is_some() || survey.participant_id != state.participant_id {
                    return corrupt(format!("unexpected survey at seq {}", e.seq));
                }
                out.survey = Some(survey.clone());
            }
        }
    }
    if state.is_finished() && !finished_seen {
        return corrupt("session reached its last turn but has no finished event");
    }
    out.state = state;
    Ok(out)
}

/// Replays every `*.jsonl` log in `dir`, sorted by file name.
pub fn replay_dir(
    dir: impl AsRef<Path>,
    config: &GameConfig,
    exec: Execution,
) -> Result<Vec<(PathBuf, ReplayedSession)>, LogError> {
    let dir = dir.as_ref();
    let io_err = |err| LogError::Io { path: dir.display().to_string(), err };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    batch::try_map(exec, &paths, |p| {
        let events = read_log(p)?;
        let session = replay(&events, config).map_err(|e| LogError::Corrupt(format!("{}: {}", p.display(), e.0)))?;
        Ok((p.clone(), session))
    })
}

//! Session state machines for both conditions.
//!
//! Every transition is a pure function of `(state, inputs)`: the caller passes
//! the turn timestamp in, so replaying a log through these functions rebuilds
//! the live state exactly.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GameConfig, OutcomeThresholds, PracticeError, PracticeSet, PHASE_COUNT, TOTAL_TURNS};
use crate::gm::GmResponse;
use crate::ids::{HeroId, NpcId, PhraseId, SceneId};
use crate::tracker::{self, DetectionResult, PhraseMatcher, ReminderDecision, UsageState};

/// Upper bound on checkpoint points a single turn may award.
pub const MAX_CHECKPOINT_DELTA: u32 = 3;
const SUMMARY_LIMIT: usize = 160;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rpg,
    Classroom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub turn: u8,
    pub summary: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndingLabel {
    Setback,
    Mixed,
    Triumphant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub ending_label: EndingLabel,
    pub checkpoint_total: u32,
    pub master_assessment: String,
}

/// What a classroom turn is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassroomSlot {
    Intro,
    /// Index into `word_order`.
    Introduce(usize),
    Feedback(usize),
    Outro,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassroomPlan {
    pub word_order: Vec<PhraseId>,
}

impl ClassroomPlan {
    /// Turn 1 is the intro, word `k` (1-based) takes turns `2k` and `2k+1`,
    /// and turn 12 is the outro.
    pub fn slot(&self, turn: u8) -> Option<ClassroomSlot> {
        match turn {
            1 => Some(ClassroomSlot::Intro),
            t if t == TOTAL_TURNS => Some(ClassroomSlot::Outro),
            t if (2..TOTAL_TURNS).contains(&t) => {
                let word = usize::from(t / 2 - 1);
                Some(if t % 2 == 0 {
                    ClassroomSlot::Introduce(word)
                } else {
                    ClassroomSlot::Feedback(word)
                })
            }
            _ => None,
        }
    }

    pub fn schedule(&self) -> Vec<(u8, ClassroomSlot)> {
        (1..=TOTAL_TURNS).filter_map(|t| self.slot(t).map(|s| (t, s))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSpec {
    Intro { persona: String },
    IntroduceWord { phrase_id: PhraseId },
    FeedbackOnSentence { phrase_id: PhraseId, learner_sentence: String },
    Outro { words: Vec<PhraseId> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub participant_id: String,
    pub mode: Mode,
    pub practice: PracticeSet,
    pub hero_id: Option<HeroId>,
    pub turn_index: u8,
    pub phase: Option<u8>,
    pub location: Option<String>,
    pub party: BTreeSet<NpcId>,
    pub decision_history: Vec<Decision>,
    pub checkpoint_values: BTreeMap<u8, u32>,
    pub usage: Vec<UsageState>,
    /// How often the game master recast each phrase in its own narration.
    pub gm_exposure: BTreeMap<PhraseId, u32>,
    pub plan: Option<ClassroomPlan>,
    pub outcome: Option<Outcome>,
    pub status: Status,
}

impl SessionState {
    pub fn is_finished(&self) -> bool {
        self.status == Status::Finished
    }

    pub fn total_usage(&self) -> u32 {
        self.usage.iter().map(|u| u.count).sum()
    }

    pub fn usage_of(&self, id: &PhraseId) -> Option<&UsageState> {
        self.usage.iter().find(|u| &u.phrase_id == id)
    }

    pub fn checkpoint_total(&self) -> u32 {
        self.checkpoint_values.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: u8,
    pub learner_transcript: String,
    pub detections: Vec<DetectionResult>,
    pub gm_narrative: String,
    pub speaking_npc_id: Option<NpcId>,
    pub scene_id: Option<SceneId>,
    pub reminder: Option<ReminderDecision>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("invalid hero: {0}")]
    InvalidHero(String),
    #[error("invalid practice set: {0}")]
    InvalidPracticeSet(#[from] PracticeError),
    #[error("illegal transition at turn {turn} to {location:?}: {reason}")]
    IllegalTransition { turn: u8, location: String, reason: String },
    #[error("session is finished")]
    SessionFinished,
    #[error("operation requires a {0:?} session")]
    WrongMode(Mode),
    #[error("no checkpoint value recorded for phase {0}")]
    MissingPhaseValue(u8),
    #[error(transparent)]
    UnknownPhrase(#[from] tracker::UnknownPhrase),
}

pub fn create_session(
    session_id: impl Into<String>,
    participant_id: impl Into<String>,
    mode: Mode,
    practice: Vec<PhraseId>,
    hero_id: Option<HeroId>,
    config: &GameConfig,
) -> Result<SessionState, SessionError> {
    let practice = PracticeSet::new(practice, &config.phrases)?;
    match (mode, &hero_id) {
        (Mode::Rpg, None) => return Err(SessionError::InvalidHero("an RPG session needs a hero".into())),
        (Mode::Rpg, Some(h)) if config.hero(h).is_none() => {
            return Err(SessionError::InvalidHero(format!("hero {h} is not configured")))
        }
        (Mode::Classroom, Some(h)) => {
            return Err(SessionError::InvalidHero(format!("classroom sessions take no hero (got {h})")))
        }
        _ => {}
    }
    let rpg = mode == Mode::Rpg;
    Ok(SessionState {
        session_id: session_id.into(),
        participant_id: participant_id.into(),
        mode,
        usage: tracker::initial_usage(&practice),
        plan: (!rpg).then(|| ClassroomPlan { word_order: practice.ids().to_vec() }),
        practice,
        hero_id,
        turn_index: 0,
        phase: rpg.then_some(1),
        location: rpg.then(|| config.start_location.clone()),
        party: BTreeSet::new(),
        decision_history: Vec::new(),
        checkpoint_values: BTreeMap::new(),
        gm_exposure: BTreeMap::new(),
        outcome: None,
        status: Status::Active,
    })
}

/// Checks that `location` may be entered on `turn`: any location of the
/// turn's phase, except that the phase's last turn must land on its checkpoint.
pub fn check_transition(config: &GameConfig, turn: u8, location: &str) -> Result<(), SessionError> {
    let phase = config.phase_for_turn(turn);
    let illegal = |reason: String| SessionError::IllegalTransition {
        turn,
        location: location.to_owned(),
        reason,
    };
    if phase.turns.last == turn {
        if location != phase.checkpoint {
            return Err(illegal(format!(
                "phase {} must converge on checkpoint {}",
                phase.number, phase.checkpoint
            )));
        }
    } else if !phase.allows(location) {
        return Err(illegal(format!("not a location of phase {}", phase.number)));
    }
    Ok(())
}

fn guard(state: &SessionState, mode: Mode) -> Result<u8, SessionError> {
    if state.mode != mode {
        return Err(SessionError::WrongMode(mode));
    }
    if state.is_finished() || state.turn_index >= TOTAL_TURNS {
        return Err(SessionError::SessionFinished);
    }
    Ok(state.turn_index + 1)
}

fn summarize(transcript: &str) -> String {
    let trimmed = transcript.trim();
    match trimmed.char_indices().nth(SUMMARY_LIMIT) {
        Some((cut, _)) => format!("{}…", &trimmed[..cut]),
        None => trimmed.to_owned(),
    }
}

fn detect_and_apply(
    state: &SessionState,
    config: &GameConfig,
    transcript: &str,
) -> Result<(Vec<DetectionResult>, Vec<UsageState>), SessionError> {
    let detections = PhraseMatcher::for_practice(&state.practice, &config.phrases).detect(transcript);
    let usage = tracker::apply_detections(&state.usage, &detections)?;
    Ok((detections, usage))
}

pub fn advance_rpg_turn(
    state: &SessionState,
    config: &GameConfig,
    learner_transcript: &str,
    response: &GmResponse,
    at: DateTime<Utc>,
) -> Result<(SessionState, TurnRecord), SessionError> {
    let turn = guard(state, Mode::Rpg)?;
    check_transition(config, turn, &response.next_state)?;
    let (detections, usage) = detect_and_apply(state, config, learner_transcript)?;
    let phase = config.phase_for_turn(turn).number;

    let mut next = state.clone();
    next.turn_index = turn;
    next.phase = Some(phase);
    next.location = Some(response.next_state.clone());
    next.usage = usage;
    next.party.extend(response.party_delta.iter().cloned());
    *next.checkpoint_values.entry(phase).or_insert(0) += u32::from(response.checkpoint_delta).min(MAX_CHECKPOINT_DELTA);
    for id in &response.recast_phrases {
        *next.gm_exposure.entry(id.clone()).or_insert(0) += 1;
    }
    next.decision_history.push(Decision { turn, summary: summarize(learner_transcript) });

    let reminder = tracker::reminder_due(&next.usage, turn, &config.reminders, &config.phrases);
    if turn == TOTAL_TURNS {
        let assessment = response.master_assessment.clone().unwrap_or_default();
        next.outcome = Some(compute_outcome(&next.checkpoint_values, &assessment, &config.outcome)?);
        next.status = Status::Finished;
    }

    let record = TurnRecord {
        turn_index: turn,
        learner_transcript: learner_transcript.to_owned(),
        detections,
        gm_narrative: response.narrative.clone(),
        speaking_npc_id: Some(response.speaking_npc.clone()),
        scene_id: Some(response.scene.clone()),
        reminder: (!reminder.is_empty()).then_some(reminder),
        timestamp: at,
    };
    Ok((next, record))
}

/// Prompt kind for the classroom turn about to be played.
pub fn classroom_prompt(state: &SessionState, config: &GameConfig) -> Result<PromptSpec, SessionError> {
    let turn = guard(state, Mode::Classroom)?;
    let plan = state.plan.as_ref().ok_or(SessionError::WrongMode(Mode::Classroom))?;
    let slot = plan.slot(turn).ok_or(SessionError::SessionFinished)?;
    Ok(match slot {
        ClassroomSlot::Intro => PromptSpec::Intro { persona: config.classroom_persona.clone() },
        ClassroomSlot::Introduce(k) => PromptSpec::IntroduceWord { phrase_id: plan.word_order[k].clone() },
        ClassroomSlot::Feedback(k) => PromptSpec::FeedbackOnSentence {
            phrase_id: plan.word_order[k].clone(),
            learner_sentence: state
                .decision_history
                .last()
                .map(|d| d.summary.clone())
                .unwrap_or_default(),
        },
        ClassroomSlot::Outro => PromptSpec::Outro { words: plan.word_order.clone() },
    })
}

pub fn advance_classroom_turn(
    state: &SessionState,
    config: &GameConfig,
    learner_transcript: &str,
    agent_reply: &str,
    at: DateTime<Utc>,
) -> Result<(SessionState, TurnRecord), SessionError> {
    let turn = guard(state, Mode::Classroom)?;
    let (detections, usage) = detect_and_apply(state, config, learner_transcript)?;

    let mut next = state.clone();
    next.turn_index = turn;
    next.usage = usage;
    next.decision_history.push(Decision { turn, summary: summarize(learner_transcript) });
    if turn == TOTAL_TURNS {
        next.status = Status::Finished;
    }
    let record = TurnRecord {
        turn_index: turn,
        learner_transcript: learner_transcript.to_owned(),
        detections,
        gm_narrative: agent_reply.to_owned(),
        speaking_npc_id: None,
        scene_id: None,
        reminder: None,
        timestamp: at,
    };
    Ok((next, record))
}

/// Sums the per-phase checkpoint values and maps the total onto an ending.
/// The assessment text is attached as-is and never influences the label.
pub fn compute_outcome(
    checkpoint_values: &BTreeMap<u8, u32>,
    master_assessment: &str,
    thresholds: &OutcomeThresholds,
) -> Result<Outcome, SessionError> {
    let mut total = 0;
    for phase in 1..=PHASE_COUNT as u8 {
        total += checkpoint_values
            .get(&phase)
            .ok_or(SessionError::MissingPhaseValue(phase))?;
    }
    let ending_label = if total >= thresholds.triumphant_at {
        EndingLabel::Triumphant
    } else if total >= thresholds.mixed_at {
        EndingLabel::Mixed
    } else {
        EndingLabel::Setback
    };
    Ok(Outcome {
        ending_label,
        checkpoint_total: total,
        master_assessment: master_assessment.to_owned(),
    })
}

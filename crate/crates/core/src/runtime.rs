//! Live session runtime: owns one session's state and event sink and runs the
//! turn pipeline (ASR → provider or teacher → state transition → TTS) as a
//! unit. Nothing is committed, in memory or in the log, unless every stage
//! succeeds.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{AnalyticsError, Group, SurveyResponse};
use crate::assessment::{
    self, AssessmentError, Elicitation, FamiliarityRating, FeedbackReport, Grader, MockGrader, PosttestResponse,
    PosttestResult, PretestResult,
};
use crate::batch::Execution;
use crate::config::GameConfig;
use crate::events::{
    Created, EventBody, EventSink, Finished, SessionEvent, TurnCompleted, TurnInput, LOG_SCHEMA_VERSION,
};
use crate::gm::{self, NarrativeProvider, OrchestratorError, ResponseContract};
use crate::ids::{HeroId, NpcId, PhraseId, SceneId};
use crate::session::{self, Mode, Outcome, SessionError, SessionState, Status, TurnRecord};
use crate::speech::{AsrError, AudioPayload, PassthroughAsr, SilentTts, SpeechRecognizer, SpeechSynthesizer, TtsError};
use crate::teacher::{TemplateTeacher, Teacher};
use crate::tracker::{Color, ReminderDecision};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Shared, immutable collaborators for every session of a process.
pub struct Services {
    pub config: Arc<GameConfig>,
    pub provider: Arc<dyn NarrativeProvider>,
    pub teacher: Arc<dyn Teacher>,
    pub grader: Arc<dyn Grader>,
    pub asr: Arc<dyn SpeechRecognizer>,
    pub tts: Arc<dyn SpeechSynthesizer>,
    pub clock: Arc<dyn Clock>,
    pub max_attempts: u32,
    pub exec: Execution,
}

impl Services {
    /// Offline services: the given provider, template teacher, mock grader,
    /// passthrough ASR, silent TTS and the system clock.
    pub fn offline(config: Arc<GameConfig>, provider: Arc<dyn NarrativeProvider>) -> Self {
        Self {
            config,
            provider,
            teacher: Arc::new(TemplateTeacher),
            grader: Arc::new(MockGrader::new()),
            asr: Arc::new(PassthroughAsr),
            tts: Arc::new(SilentTts),
            clock: Arc::new(SystemClock),
            max_attempts: gm::DEFAULT_MAX_ATTEMPTS,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Provider(#[from] OrchestratorError),
    #[error("teacher failed: {0}")]
    Teacher(gm::TransportError),
    #[error(transparent)]
    Asr(#[from] AsrError),
    #[error(transparent)]
    Tts(#[from] TtsError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Survey(#[from] AnalyticsError),
    #[error("could not write session log: {0}")]
    Log(#[from] std::io::Error),
    #[error("out of order: {0}")]
    OutOfOrder(String),
}

/// Learner input for one turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerInput {
    Text(String),
    Audio(AudioPayload),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PracticeBoxRow {
    pub phrase_id: PhraseId,
    pub phrase: String,
    pub meaning: String,
    pub example: String,
    pub count: u32,
    pub color: Color,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpcView {
    pub id: NpcId,
    pub name: String,
    pub portrait_asset: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneView {
    pub id: SceneId,
    pub image_ref: String,
}

/// What the client renders after a turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnView {
    pub turn_index: u8,
    pub learner_transcript: String,
    pub narrative: String,
    /// Always present, whether or not audio was synthesized.
    pub subtitle: String,
    pub speaking_npc: Option<NpcView>,
    pub scene: Option<SceneView>,
    pub practice_box: Vec<PracticeBoxRow>,
    pub reminder: Option<ReminderDecision>,
    pub audio_ref: Option<String>,
    pub status: Status,
    pub outcome: Option<Outcome>,
}

/// Read-only snapshot of a session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub mode: Mode,
    pub hero_id: Option<HeroId>,
    pub turn_index: u8,
    pub phase: Option<u8>,
    pub location: Option<String>,
    pub party: Vec<NpcId>,
    pub status: Status,
    pub practice_box: Vec<PracticeBoxRow>,
    pub intro_video_ref: String,
    pub last_turn: Option<TurnView>,
    pub outcome: Option<Outcome>,
    pub pretest_done: bool,
    pub feedback_ready: bool,
    pub posttest_done: bool,
    pub survey_done: bool,
}

pub fn practice_box(state: &SessionState, config: &GameConfig) -> Vec<PracticeBoxRow> {
    state
        .usage
        .iter()
        .map(|u| {
            let p = config.phrases.get(&u.phrase_id);
            PracticeBoxRow {
                phrase_id: u.phrase_id.clone(),
                phrase: p.map(|p| p.canonical.clone()).unwrap_or_default(),
                meaning: p.map(|p| p.meaning.clone()).unwrap_or_default(),
                example: p.map(|p| p.example.clone()).unwrap_or_default(),
                count: u.count,
                color: u.color,
            }
        })
        .collect()
}

pub struct SessionRuntime {
    services: Arc<Services>,
    sink: Box<dyn EventSink>,
    state: SessionState,
    records: Vec<TurnRecord>,
    next_seq: u64,
    last_turn: Option<TurnView>,
    pretest: Option<PretestResult>,
    feedback: Option<FeedbackReport>,
    posttest: Option<PosttestResult>,
    survey: Option<SurveyResponse>,
}

impl SessionRuntime {
    /// Creates the session and writes its `created` event.
    pub fn create(
        services: Arc<Services>,
        sink: Box<dyn EventSink>,
        session_id: impl Into<String>,
        participant_id: impl Into<String>,
        mode: Mode,
        practice: Vec<PhraseId>,
        hero_id: Option<HeroId>,
    ) -> Result<Self, RuntimeError> {
        let state = session::create_session(
            session_id,
            participant_id,
            mode,
            practice.clone(),
            hero_id.clone(),
            &services.config,
        )?;
        let mut rt = Self {
            sink,
            records: Vec::new(),
            next_seq: 1,
            last_turn: None,
            pretest: None,
            feedback: None,
            posttest: None,
            survey: None,
            state,
            services,
        };
        let created = Created {
            participant_id: rt.state.participant_id.clone(),
            mode,
            practice,
            hero_id,
            config_digest: rt.services.config.digest(),
        };
        rt.commit(vec![EventBody::Created(created)])?;
        Ok(rt)
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn records(&self) -> &[TurnRecord] {
        &self.records
    }

    pub fn config(&self) -> &GameConfig {
        &self.services.config
    }

    pub fn pretest(&self) -> Option<&PretestResult> {
        self.pretest.as_ref()
    }

    pub fn posttest(&self) -> Option<&PosttestResult> {
        self.posttest.as_ref()
    }

    pub fn survey(&self) -> Option<&SurveyResponse> {
        self.survey.as_ref()
    }

    pub fn feedback_report(&self) -> Option<&FeedbackReport> {
        self.feedback.as_ref()
    }

    /// Stamps and appends events, advancing `next_seq` only on success.
    fn commit(&mut self, bodies: Vec<EventBody>) -> Result<(), RuntimeError> {
        let now = self.services.clock.now();
        let events: Vec<SessionEvent> = bodies
            .into_iter()
            .zip(self.next_seq..)
            .map(|(body, seq)| SessionEvent {
                schema_version: LOG_SCHEMA_VERSION,
                seq,
                session_id: self.state.session_id.clone(),
                timestamp: now,
                body,
            })
            .collect();
        self.sink.append(&events)?;
        self.next_seq += events.len() as u64;
        Ok(())
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.state.session_id.clone(),
            participant_id: self.state.participant_id.clone(),
            mode: self.state.mode,
            hero_id: self.state.hero_id.clone(),
            turn_index: self.state.turn_index,
            phase: self.state.phase,
            location: self.state.location.clone(),
            party: self.state.party.iter().cloned().collect(),
            status: self.state.status,
            practice_box: practice_box(&self.state, &self.services.config),
            intro_video_ref: self.services.config.intro_video_ref.clone(),
            last_turn: self.last_turn.clone(),
            outcome: self.state.outcome.clone(),
            pretest_done: self.pretest.is_some(),
            feedback_ready: self.feedback.is_some(),
            posttest_done: self.posttest.is_some(),
            survey_done: self.survey.is_some(),
        }
    }

    pub fn submit_pretest(
        &mut self,
        ratings: &[FamiliarityRating],
        elicited: &[Elicitation],
    ) -> Result<PretestResult, RuntimeError> {
        if self.pretest.is_some() {
            return Err(RuntimeError::OutOfOrder("pre-test already recorded".into()));
        }
        if self.state.turn_index > 0 {
            return Err(RuntimeError::OutOfOrder("pre-test must precede the first turn".into()));
        }
        let config = &self.services.config;
        let result = assessment::run_pretest(
            self.state.practice.ids(),
            ratings,
            elicited,
            &config.phrases,
            self.services.grader.as_ref(),
        )?;
        self.commit(result.items.iter().cloned().map(EventBody::PretestItem).collect())?;
        self.pretest = Some(result.clone());
        Ok(result)
    }

    /// Runs one full turn. On any error the session is left exactly as it was.
    pub fn submit_turn(&mut self, input: LearnerInput) -> Result<TurnView, RuntimeError> {
        if self.state.is_finished() {
            return Err(SessionError::SessionFinished.into());
        }
        let services = Arc::clone(&self.services);
        let config = services.config.as_ref();
        let transcript = match input {
            LearnerInput::Text(text) => text,
            LearnerInput::Audio(audio) => services.asr.transcribe(&audio)?,
        };

        let (next, record, turn_input) = match self.state.mode {
            Mode::Rpg => {
                let request = gm::build_gm_prompt(&self.state, config, &transcript);
                let contract = ResponseContract::for_next_turn(&self.state, config);
                let response =
                    gm::request_with_retry(services.provider.as_ref(), &request, &contract, services.max_attempts)?;
                let (next, record) =
                    session::advance_rpg_turn(&self.state, config, &transcript, &response, services.clock.now())?;
                (next, record, TurnInput::Rpg { gm_response: response })
            }
            Mode::Classroom => {
                let prompt = session::classroom_prompt(&self.state, config)?;
                let reply = services
                    .teacher
                    .reply(&self.state.session_id, self.state.turn_index + 1, &prompt, config)
                    .map_err(RuntimeError::Teacher)?;
                let (next, record) =
                    session::advance_classroom_turn(&self.state, config, &transcript, &reply, services.clock.now())?;
                (next, record, TurnInput::Classroom { agent_reply: reply })
            }
        };

        let voice = record.speaking_npc_id.as_ref().map(NpcId::as_str);
        let audio_ref = services.tts.synthesize(&record.gm_narrative, voice)?;

        let mut bodies = vec![EventBody::TurnCompleted(TurnCompleted { input: turn_input, record: record.clone() })];
        if let Some(reminder) = &record.reminder {
            bodies.push(EventBody::ReminderShown(reminder.clone()));
        }
        if next.is_finished() {
            bodies.push(EventBody::Finished(Finished { turn_index: next.turn_index, outcome: next.outcome.clone() }));
        }
        let view = TurnView {
            turn_index: record.turn_index,
            learner_transcript: record.learner_transcript.clone(),
            narrative: record.gm_narrative.clone(),
            subtitle: record.gm_narrative.clone(),
            speaking_npc: record.speaking_npc_id.as_ref().and_then(|id| config.npc(id)).map(|n| NpcView {
                id: n.id.clone(),
                name: n.name.clone(),
                portrait_asset: n.portrait_asset.clone(),
            }),
            scene: record
                .scene_id
                .as_ref()
                .and_then(|id| config.scene(id))
                .map(|s| SceneView { id: s.id.clone(), image_ref: s.image_ref.clone() }),
            practice_box: practice_box(&next, config),
            reminder: record.reminder.clone(),
            audio_ref,
            status: next.status,
            outcome: next.outcome.clone(),
        };

        self.commit(bodies)?;
        self.state = next;
        self.records.push(record);
        self.last_turn = Some(view.clone());
        Ok(view)
    }

    /// Builds the feedback report once; later calls return the same report.
    pub fn feedback(&mut self) -> Result<FeedbackReport, RuntimeError> {
        if let Some(report) = &self.feedback {
            return Ok(report.clone());
        }
        if self.posttest.is_some() {
            return Err(RuntimeError::OutOfOrder("feedback must precede the post-test".into()));
        }
        let report = assessment::build_feedback_report(
            &self.state,
            &self.records,
            &self.services.config.phrases,
            self.services.grader.as_ref(),
            self.services.exec,
        )?;
        self.commit(vec![EventBody::FeedbackBuilt(report.clone())])?;
        self.feedback = Some(report.clone());
        Ok(report)
    }

    /// Immediate post-test. Builds the feedback report first if the client
    /// skipped it, keeping the log in lifecycle order.
    pub fn submit_posttest(&mut self, responses: &[PosttestResponse]) -> Result<PosttestResult, RuntimeError> {
        if !self.state.is_finished() {
            return Err(AssessmentError::SessionNotFinished.into());
        }
        if self.posttest.is_some() {
            return Err(RuntimeError::OutOfOrder("post-test already recorded".into()));
        }
        let result = assessment::run_posttest(
            &self.state.practice,
            responses,
            &self.services.config.phrases,
            self.services.grader.as_ref(),
            self.services.exec,
        )?;
        self.feedback()?;
        self.commit(result.items.iter().cloned().map(EventBody::PosttestItem).collect())?;
        self.posttest = Some(result.clone());
        Ok(result)
    }

    pub fn submit_survey(&mut self, answers: [u8; 4]) -> Result<SurveyResponse, RuntimeError> {
        if self.posttest.is_none() {
            return Err(RuntimeError::OutOfOrder("the survey follows the post-test".into()));
        }
        if self.survey.is_some() {
            return Err(RuntimeError::OutOfOrder("survey already recorded".into()));
        }
        let [q1, q2, q3, q4] = answers;
        let survey = SurveyResponse {
            participant_id: self.state.participant_id.clone(),
            group: Group::from(self.state.mode),
            q1,
            q2,
            q3,
            q4,
        };
        survey.validate()?;
        self.commit(vec![EventBody::SurveyRecorded(survey.clone())])?;
        self.survey = Some(survey.clone());
        Ok(survey)
    }
}

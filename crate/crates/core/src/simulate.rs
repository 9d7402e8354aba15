//! Scripted learners for offline end-to-end runs.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::assessment::{Elicitation, Familiarity, FamiliarityRating, PosttestResponse};
use crate::events::EventSink;
use crate::ids::{HeroId, PhraseId};
use crate::runtime::{LearnerInput, RuntimeError, Services, SessionRuntime};
use crate::session::Mode;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid learner script: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, Deserialize)]
pub struct PretestAnswer {
    pub phrase_id: PhraseId,
    pub level: Familiarity,
    #[serde(default)]
    pub definition: Option<String>,
    #[serde(default)]
    pub sentence: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct LearnerScript {
    pub participant_id: String,
    pub hero_id: Option<HeroId>,
    pub practice: Vec<PhraseId>,
    pub turns: Vec<String>,
    #[serde(default)]
    pub pretest: Vec<PretestAnswer>,
    #[serde(default)]
    pub posttest: Vec<PosttestResponse>,
    pub survey: Option<[u8; 4]>,
}

impl LearnerScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScriptError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScriptError> {
        toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))
    }

    fn pretest_inputs(&self) -> (Vec<FamiliarityRating>, Vec<Elicitation>) {
        let ratings = self
            .pretest
            .iter()
            .map(|a| FamiliarityRating { phrase_id: a.phrase_id.clone(), level: a.level })
            .collect();
        let elicited = self
            .pretest
            .iter()
            .filter(|a| a.definition.is_some() || a.sentence.is_some())
            .map(|a| Elicitation {
                phrase_id: a.phrase_id.clone(),
                definition: a.definition.clone().unwrap_or_default(),
                sentence: a.sentence.clone().unwrap_or_default(),
            })
            .collect();
        (ratings, elicited)
    }
}

/// Plays a whole session from the script: pre-test (if scripted), every
/// turn, feedback, post-test and survey. Classroom sessions ignore the hero.
pub fn run_script(
    services: Arc<Services>,
    sink: Box<dyn EventSink>,
    session_id: &str,
    mode: Mode,
    script: &LearnerScript,
) -> Result<SessionRuntime, RuntimeError> {
    let hero = match mode {
        Mode::Rpg => script.hero_id.clone(),
        Mode::Classroom => None,
    };
    let mut rt = SessionRuntime::create(
        services,
        sink,
        session_id,
        script.participant_id.clone(),
        mode,
        script.practice.clone(),
        hero,
    )?;
    if !script.pretest.is_empty() {
        let (ratings, elicited) = script.pretest_inputs();
        rt.submit_pretest(&ratings, &elicited)?;
    }
    for text in &script.turns {
        if rt.state().is_finished() {
            break;
        }
        rt.submit_turn(LearnerInput::Text(text.clone()))?;
    }
    if rt.state().is_finished() {
        rt.feedback()?;
        if !script.posttest.is_empty() {
            rt.submit_posttest(&script.posttest)?;
            if let Some(answers) = script.survey {
                rt.submit_survey(answers)?;
            }
        }
    }
    Ok(rt)
}

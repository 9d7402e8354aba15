//! The AI teacher of the classroom condition.

use crate::config::GameConfig;
use crate::gm::{NarrativeProvider, ProviderCall, TransportError};
use crate::ids::PhraseId;
use crate::session::PromptSpec;
use crate::tracker::PhraseMatcher;

pub const TEACHER_SYSTEM_PROMPT: &str = "You are a friendly AI English teacher running a short spoken lesson on \
everyday slang. Keep each reply to two to four sentences.";

pub trait Teacher: Send + Sync {
    fn reply(
        &self,
        session_id: &str,
        turn_index: u8,
        prompt: &PromptSpec,
        config: &GameConfig,
    ) -> Result<String, TransportError>;
}

fn phrase_text(config: &GameConfig, id: &PhraseId) -> (String, String, String) {
    config
        .phrases
        .get(id)
        .map(|p| (p.canonical.clone(), p.meaning.clone(), p.example.clone()))
        .unwrap_or_else(|| (id.to_string(), String::new(), String::new()))
}

/// Instruction text for a provider-backed teacher.
pub fn render_classroom_prompt(prompt: &PromptSpec, config: &GameConfig) -> String {
    match prompt {
        PromptSpec::Intro { persona } => format!(
            "Introduce yourself as an AI teacher using this persona: {persona}\nThen invite the student to say hello."
        ),
        PromptSpec::IntroduceWord { phrase_id } => {
            let (phrase, meaning, example) = phrase_text(config, phrase_id);
            format!(
                "Introduce the phrase \"{phrase}\" (meaning: {meaning}; example: {example}). \
                 Explain its meaning and ask the student to produce a sentence with it."
            )
        }
        PromptSpec::FeedbackOnSentence { phrase_id, learner_sentence } => {
            let (phrase, meaning, _) = phrase_text(config, phrase_id);
            format!(
                "The student was asked to use \"{phrase}\" ({meaning}) and said: \"{learner_sentence}\"\n\
                 Analyze the sentence and give explicit feedback on meaning accuracy and any grammatical issues, \
                 then say you will move on to the next phrase."
            )
        }
        PromptSpec::Outro { words } => {
            let list: Vec<String> = words.iter().map(|id| phrase_text(config, id).0).collect();
            format!(
                "Close the lesson with a short outro summarizing the phrases practised: {}.",
                list.join(", ")
            )
        }
    }
}

/// Deterministic offline teacher built from the configured phrase texts.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateTeacher;

impl Teacher for TemplateTeacher {
    fn reply(
        &self,
        _session_id: &str,
        _turn_index: u8,
        prompt: &PromptSpec,
        config: &GameConfig,
    ) -> Result<String, TransportError> {
        Ok(match prompt {
            PromptSpec::Intro { persona } => format!("{persona} Before we start, tell me a little about yourself."),
            PromptSpec::IntroduceWord { phrase_id } => {
                let (phrase, meaning, example) = phrase_text(config, phrase_id);
                format!(
                    "Our next phrase is \"{phrase}\". It means {meaning}. For example: \"{example}\" \
                     Now try a sentence of your own with \"{phrase}\"."
                )
            }
            PromptSpec::FeedbackOnSentence { phrase_id, learner_sentence } => {
                let (phrase, meaning, example) = phrase_text(config, phrase_id);
                let used = config.phrases.get(phrase_id).is_some_and(|p| {
                    PhraseMatcher::new([p]).detect(learner_sentence)[0].occurrences > 0
                });
                if used {
                    format!(
                        "Nice, you used \"{phrase}\". Remember it means {meaning}; check that your sentence \
                         matches that meaning. Let's move on to the next phrase."
                    )
                } else {
                    format!(
                        "I didn't hear \"{phrase}\" in your sentence. It means {meaning}, as in: \"{example}\" \
                         Let's move on to the next phrase."
                    )
                }
            }
            PromptSpec::Outro { words } => {
                let list: Vec<String> = words.iter().map(|id| format!("\"{}\"", phrase_text(config, id).0)).collect();
                format!(
                    "That's the end of today's class! We practised {}. Keep using them in real conversations.",
                    list.join(", ")
                )
            }
        })
    }
}

/// Teacher whose replies come from a [`NarrativeProvider`].
pub struct ProviderTeacher<P> {
    provider: P,
}

impl<P: NarrativeProvider> ProviderTeacher<P> {
    pub fn new(provider: P) -> Self {
        Self { provider }
    }
}

impl<P: NarrativeProvider> Teacher for ProviderTeacher<P> {
    fn reply(
        &self,
        session_id: &str,
        turn_index: u8,
        prompt: &PromptSpec,
        config: &GameConfig,
    ) -> Result<String, TransportError> {
        let call = ProviderCall {
            session_id: session_id.to_owned(),
            turn_index,
            attempt: 1,
            system: TEACHER_SYSTEM_PROMPT.to_owned(),
            prompt: render_classroom_prompt(prompt, config),
            repair_hint: None,
        };
        let text = self.provider.complete(&call)?;
        if text.trim().is_empty() {
            return Err(TransportError("teacher provider returned an empty reply".into()));
        }
        Ok(text.trim().to_owned())
    }
}

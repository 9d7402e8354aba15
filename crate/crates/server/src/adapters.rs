//! Network-backed implementations of the core's provider, grader and speech
//! interfaces. Each one calls `record_network_call` before every request.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{multipart, Client};
use serde::Deserialize;
use serde_json::json;
use slangquest_core::assessment::{Graded, Grader, TaskKind, TranscriptReview};
use slangquest_core::config::TargetPhrase;
use slangquest_core::gm::{NarrativeProvider, ProviderCall, TransportError};
use slangquest_core::speech::{
    record_network_call, AsrError, AudioPayload, SpeechRecognizer, SpeechSynthesizer, TtsError,
};

const TIMEOUT: Duration = Duration::from_secs(60);
const GRADE_TEMPLATE: &str = include_str!("../prompts/grade.txt");
const REVIEW_TEMPLATE: &str = include_str!("../prompts/review.txt");
const GRADER_SYSTEM: &str = "You are a careful, consistent English-as-a-foreign-language examiner.";

pub const TTS_ENDPOINT: &str = "https://texttospeech.googleapis.com/v1/text:synthesize";
pub const ASR_MODEL: &str = "whisper-1";

fn client() -> Client {
    Client::builder().timeout(TIMEOUT).build().expect("HTTP client")
}

/// Chat-completion provider for the OpenAI-compatible API.
pub struct ChatProvider {
    endpoint: String,
    model: String,
    api_key: String,
    client: Client,
}

impl fmt::Debug for ChatProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl ChatProvider {
    pub fn new(endpoint: &str, model: &str, api_key: String) -> Self {
        Self { endpoint: endpoint.trim_end_matches('/').to_owned(), model: model.to_owned(), api_key, client: client() }
    }

    fn chat(&self, system: &str, user: &str) -> Result<String, TransportError> {
        #[derive(Deserialize)]
        struct Reply {
            choices: Vec<Choice>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: Message,
        }
        #[derive(Deserialize)]
        struct Message {
            content: Option<String>,
        }

        record_network_call();
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let response = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| TransportError(format!("chat completion request failed: {}", e.without_url())))?;
        let reply: Reply = response
            .json()
            .map_err(|e| TransportError(format!("chat completion reply unreadable: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError("chat completion reply had no content".into()))
    }
}

impl NarrativeProvider for ChatProvider {
    fn complete(&self, call: &ProviderCall) -> Result<String, TransportError> {
        log::info!(
            "provider call: model={} session={} turn={} attempt={}",
            self.model,
            call.session_id,
            call.turn_index,
            call.attempt
        );
        self.chat(&call.system, &call.full_prompt())
    }
}

/// Grader that asks a chat model, using the prompt templates in `prompts/`.
pub struct LlmGrader {
    provider: Arc<ChatProvider>,
}

impl LlmGrader {
    pub fn new(provider: Arc<ChatProvider>) -> Self {
        Self { provider }
    }
}

/// The JSON object in a model reply, with or without a code fence around it.
fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (start < end).then(|| &text[start..=end])
}

pub fn render_grade_prompt(task: TaskKind, phrase: &TargetPhrase, answer: &str) -> String {
    let task = match task {
        TaskKind::Definition => "definition: explain what the phrase means",
        TaskKind::Sentence => "sentence: use the phrase in a sentence",
    };
    GRADE_TEMPLATE
        .replace("{phrase}", &phrase.canonical)
        .replace("{meaning}", &phrase.meaning)
        .replace("{task}", task)
        .replace("{answer}", answer)
}

pub fn render_review_prompt(transcript: &str, practice: &[&TargetPhrase]) -> String {
    let phrases: Vec<String> =
        practice.iter().map(|p| format!("- {} (phrase_id {}): {}", p.canonical, p.id, p.meaning)).collect();
    REVIEW_TEMPLATE.replace("{phrases}", &phrases.join("\n")).replace("{transcript}", transcript)
}

impl Grader for LlmGrader {
    fn grade(&self, task: TaskKind, phrase: &TargetPhrase, learner_text: &str) -> Result<Graded, String> {
        #[derive(Deserialize)]
        struct Reply {
            score: f64,
            rationale: String,
        }
        let text = self
            .provider
            .chat(GRADER_SYSTEM, &render_grade_prompt(task, phrase, learner_text))
            .map_err(|e| e.0)?;
        let body = json_object(&text).ok_or("grader reply has no JSON object")?;
        let reply: Reply = serde_json::from_str(body).map_err(|e| format!("grader reply unreadable: {e}"))?;
        Ok(Graded { score: reply.score, rationale: reply.rationale })
    }

    fn review(&self, transcript: &str, practice: &[&TargetPhrase]) -> Result<TranscriptReview, String> {
        let text = self
            .provider
            .chat(GRADER_SYSTEM, &render_review_prompt(transcript, practice))
            .map_err(|e| e.0)?;
        let body = json_object(&text).ok_or("review reply has no JSON object")?;
        serde_json::from_str(body).map_err(|e| format!("review reply unreadable: {e}"))
    }
}

/// Speech recognition through the OpenAI-compatible transcription endpoint.
pub struct WhisperAsr {
    endpoint: String,
    api_key: String,
    client: Client,
}

impl fmt::Debug for WhisperAsr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WhisperAsr").field("endpoint", &self.endpoint).field("api_key", &"<redacted>").finish()
    }
}

impl WhisperAsr {
    pub fn new(endpoint: &str, api_key: String) -> Self {
        Self { endpoint: endpoint.trim_end_matches('/').to_owned(), api_key, client: client() }
    }
}

impl SpeechRecognizer for WhisperAsr {
    fn transcribe(&self, audio: &AudioPayload) -> Result<String, AsrError> {
        #[derive(Deserialize)]
        struct Reply {
            text: String,
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(audio.base64.trim())
            .map_err(|e| AsrError(format!("audio is not valid base64: {e}")))?;
        if bytes.is_empty() {
            return Err(AsrError("empty audio".into()));
        }
        let mime = audio.mime_type.clone().unwrap_or_else(|| "audio/webm".into());
        let ext = mime.rsplit('/').next().unwrap_or("webm").to_owned();
        let part = multipart::Part::bytes(bytes)
            .file_name(format!("speech.{ext}"))
            .mime_str(&mime)
            .map_err(|e| AsrError(e.to_string()))?;
        let form = multipart::Form::new().text("model", ASR_MODEL).text("language", "en").part("file", part);

        record_network_call();
        let reply: Reply = self
            .client
            .post(format!("{}/audio/transcriptions", self.endpoint))
            .bearer_auth(&self.api_key)
            .multipart(form)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| AsrError(format!("transcription failed: {}", e.without_url())))?;
        Ok(reply.text)
    }
}

#[derive(Clone, Debug)]
pub struct StoredAudio {
    pub mime_type: String,
    pub bytes: Vec<u8>,
}

/// Recently synthesized audio, served under `/audio/{id}`. Oldest entries
/// are evicted past the capacity.
#[derive(Debug)]
pub struct AudioStore {
    capacity: usize,
    inner: Mutex<(HashMap<String, StoredAudio>, VecDeque<String>)>,
}

impl AudioStore {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), inner: Mutex::new((HashMap::new(), VecDeque::new())) }
    }

    /// Stores the clip and returns its resource reference.
    pub fn put(&self, audio: StoredAudio) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut guard = self.inner.lock().expect("audio store poisoned");
        let (map, order) = &mut *guard;
        while order.len() >= self.capacity {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        map.insert(id.clone(), audio);
        order.push_back(id.clone());
        format!("/audio/{id}")
    }

    pub fn get(&self, id: &str) -> Option<StoredAudio> {
        self.inner.lock().expect("audio store poisoned").0.get(id).cloned()
    }
}

const VOICES: [&str; 4] = ["en-US-Neural2-D", "en-US-Neural2-F", "en-US-Neural2-A", "en-US-Neural2-C"];
const NARRATOR_VOICE: &str = "en-US-Neural2-J";

/// Google Cloud Text-to-Speech. Each speaker id maps to a stable voice.
pub struct CloudTts {
    api_key: String,
    client: Client,
    store: Arc<AudioStore>,
}

impl fmt::Debug for CloudTts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CloudTts").field("api_key", &"<redacted>").finish()
    }
}

impl CloudTts {
    pub fn new(api_key: String, store: Arc<AudioStore>) -> Self {
        Self { api_key, client: client(), store }
    }
}

pub fn voice_for(speaker: Option<&str>) -> &'static str {
    match speaker {
        None => NARRATOR_VOICE,
        Some(id) => {
            let h = id.bytes().fold(0usize, |h, b| h.wrapping_mul(31).wrapping_add(usize::from(b)));
            VOICES[h % VOICES.len()]
        }
    }
}

impl SpeechSynthesizer for CloudTts {
    fn synthesize(&self, text: &str, voice: Option<&str>) -> Result<Option<String>, TtsError> {
        #[derive(Deserialize)]
        #[serde(rename_all = "camelCase")]
        struct Reply {
            audio_content: String,
        }
        let body = json!({
            "input": {"text": text},
            "voice": {"languageCode": "en-US", "name": voice_for(voice)},
            "audioConfig": {"audioEncoding": "MP3"},
        });
        record_network_call();
        let reply: Reply = self
            .client
            .post(TTS_ENDPOINT)
            .header("X-Goog-Api-Key", &self.api_key)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| TtsError(format!("synthesis failed: {}", e.without_url())))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(reply.audio_content)
            .map_err(|e| TtsError(format!("synthesis returned invalid audio: {e}")))?;
        Ok(Some(self.store.put(StoredAudio { mime_type: "audio/mpeg".into(), bytes })))
    }
}

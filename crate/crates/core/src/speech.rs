//! Speech adapters. The stubs here never touch the network; real ASR/TTS
//! clients live in the service crate and must call [`record_network_call`]
//! before every request so tests can assert an offline run made none.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

static NETWORK_CALLS: AtomicU64 = AtomicU64::new(0);

/// Marks one outbound network request. Called by every external adapter.
pub fn record_network_call() {
    NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
}

/// Outbound requests made by external adapters since process start.
pub fn network_calls() -> u64 {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

/// Recorded learner audio as received from the client.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioPayload {
    /// Base64-encoded audio bytes.
    #[serde(default)]
    pub base64: String,
    #[serde(default)]
    pub mime_type: Option<String>,
    /// Transcript supplied alongside the audio; consumed by the passthrough stub.
    #[serde(default)]
    pub sidecar_text: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("speech recognition failed: {0}")]
pub struct AsrError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("speech synthesis failed: {0}")]
pub struct TtsError(pub String);

pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, audio: &AudioPayload) -> Result<String, AsrError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    /// Returns a server-side reference to the synthesized audio, or `None`
    /// when no audio is produced.
    fn synthesize(&self, text: &str, voice: Option<&str>) -> Result<Option<String>, TtsError>;
}

/// Offline ASR: the transcript is the payload's `sidecar_text`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PassthroughAsr;

impl SpeechRecognizer for PassthroughAsr {
    fn transcribe(&self, audio: &AudioPayload) -> Result<String, AsrError> {
        audio
            .sidecar_text
            .clone()
            .ok_or_else(|| AsrError("text-passthrough stub needs sidecar_text".into()))
    }
}

/// Offline TTS that produces no audio; clients fall back to subtitles.
#[derive(Clone, Copy, Debug, Default)]
pub struct SilentTts;

impl SpeechSynthesizer for SilentTts {
    fn synthesize(&self, _text: &str, _voice: Option<&str>) -> Result<Option<String>, TtsError> {
        Ok(None)
    }
}
